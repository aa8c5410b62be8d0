#include "myograph/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace myograph::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double deg(double d) { return d * kPi / 180.0; }

// Segment lengths (m).
constexpr double kPelvisToNeck = 0.52;
constexpr double kHipHalfWidth = 0.10;
constexpr double kShoulderHalfWidth = 0.19;
constexpr double kUpperArm = 0.30;
constexpr double kForearm = 0.27;
constexpr double kThigh = 0.44;
constexpr double kShank = 0.42;
constexpr double kForearmCom = 0.6 * kForearm;
constexpr double kShankCom = 0.5 * kShank;
constexpr double kLegCom = 0.42;

// Body-25 indices.
enum J : std::size_t {
    Nose, Neck, RShoulder, RElbow, RWrist, LShoulder, LElbow, LWrist, MidHip, RHip, RKnee, RAnkle, LHip, LKnee,
    LAnkle, REye, LEye, REar, LEar, LBigToe, LSmallToe, LHeel, RBigToe, RSmallToe, RHeel,
};

struct Mat3 {
    double m[3][3];

    static Mat3 identity() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }
    Point3 operator*(const Point3& p) const {
        return {m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z, m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
                m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z};
    }
};

Mat3 rotx(double a) {
    double c = std::cos(a), s = std::sin(a);
    return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
}
Mat3 roty(double a) {
    double c = std::cos(a), s = std::sin(a);
    return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
}
Mat3 rotz(double a) {
    double c = std::cos(a), s = std::sin(a);
    return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
}
// Swings the hanging direction forward.
Mat3 flex(double a) { return rotx(-a); }

Point3 operator+(Point3 a, Point3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Point3 operator*(double s, Point3 a) { return {s * a.x, s * a.y, s * a.z}; }
constexpr Point3 kDown{0, -1, 0};

double side_sign(Side s) { return s == kLeft ? 1.0 : -1.0; }

Skeleton body_frame(const Pose& p) {
    Skeleton sk;
    auto& J = sk.joints;
    const Point3 pelvis{0, 0, 0};
    J[MidHip] = pelvis;

    Mat3 trunk = rotz(-p.trunk_side) * rotx(p.trunk_lean);
    Mat3 girdle = trunk * roty(p.trunk_twist);
    Point3 neck = pelvis + trunk * Point3{0, kPelvisToNeck, 0};
    J[Neck] = neck;
    J[Nose] = neck + girdle * Point3{0, 0.20, 0.07};
    J[LEye] = neck + girdle * Point3{0.035, 0.23, 0.06};
    J[REye] = neck + girdle * Point3{-0.035, 0.23, 0.06};
    J[LEar] = neck + girdle * Point3{0.075, 0.20, -0.01};
    J[REar] = neck + girdle * Point3{-0.075, 0.20, -0.01};

    for (Side s : {kLeft, kRight}) {
        double sg = side_sign(s);
        Point3 shoulder = neck + girdle * Point3{sg * kShoulderHalfWidth, -0.03, 0};
        Mat3 upper = girdle * rotz(sg * p.shoulder_abd[s]) * flex(p.shoulder_flex[s]);
        Point3 elbow = shoulder + kUpperArm * (upper * kDown);
        Mat3 fore = upper * flex(p.elbow_flex[s]);
        Point3 wrist = elbow + kForearm * (fore * kDown);
        J[s == kLeft ? LShoulder : RShoulder] = shoulder;
        J[s == kLeft ? LElbow : RElbow] = elbow;
        J[s == kLeft ? LWrist : RWrist] = wrist;

        Point3 hip = pelvis + Point3{sg * kHipHalfWidth, 0, 0};
        Mat3 thigh = rotz(sg * p.hip_abd[s]) * flex(p.hip_flex[s]);
        Point3 knee = hip + kThigh * (thigh * kDown);
        Mat3 shank = thigh * flex(-p.knee_flex[s]);
        Point3 ankle = knee + kShank * (shank * kDown);
        Mat3 foot = shank * flex(kPi / 2);
        Point3 toe_dir = foot * kDown;
        Point3 up = shank * Point3{0, 1, 0};
        Point3 out = shank * Point3{sg, 0, 0};
        Point3 ground = ankle + (-0.06) * up;
        J[s == kLeft ? LHip : RHip] = hip;
        J[s == kLeft ? LKnee : RKnee] = knee;
        J[s == kLeft ? LAnkle : RAnkle] = ankle;
        J[s == kLeft ? LBigToe : RBigToe] = ground + 0.17 * toe_dir + 0.02 * out;
        J[s == kLeft ? LSmallToe : RSmallToe] = ground + 0.15 * toe_dir + 0.06 * out;
        J[s == kLeft ? LHeel : RHeel] = ground + (-0.05) * toe_dir;
    }
    return sk;
}

double lowest_foot_point(const Skeleton& sk, Side s) {
    std::array<std::size_t, 4> ids = s == kLeft ? std::array<std::size_t, 4>{LAnkle, LBigToe, LSmallToe, LHeel}
                                                : std::array<std::size_t, 4>{RAnkle, RBigToe, RSmallToe, RHeel};
    double lo = sk.joints[ids[0]].y;
    for (auto i : ids) lo = std::min(lo, sk.joints[i].y);
    return lo;
}

// Pose arithmetic used for interpolation and amplitude scaling.
template <class F>
void for_each_angle(Pose& out, const Pose& a, const Pose& b, F f) {
    for (std::size_t s = 0; s < 2; ++s) {
        out.shoulder_flex[s] = f(a.shoulder_flex[s], b.shoulder_flex[s]);
        out.shoulder_abd[s] = f(a.shoulder_abd[s], b.shoulder_abd[s]);
        out.elbow_flex[s] = f(a.elbow_flex[s], b.elbow_flex[s]);
        out.hip_flex[s] = f(a.hip_flex[s], b.hip_flex[s]);
        out.hip_abd[s] = f(a.hip_abd[s], b.hip_abd[s]);
        out.knee_flex[s] = f(a.knee_flex[s], b.knee_flex[s]);
    }
    out.trunk_lean = f(a.trunk_lean, b.trunk_lean);
    out.trunk_side = f(a.trunk_side, b.trunk_side);
    out.trunk_twist = f(a.trunk_twist, b.trunk_twist);
    out.root_x = f(a.root_x, b.root_x);
    out.root_z = f(a.root_z, b.root_z);
    out.hop = f(a.hop, b.hop);
}

double wrap_angle(double a) { return std::remainder(a, 2 * kPi); }

std::array<double, 12> limb_angles(const Pose& p) {
    return {p.shoulder_flex[0], p.shoulder_abd[0], p.elbow_flex[0], p.hip_flex[0], p.hip_abd[0], p.knee_flex[0],
            p.shoulder_flex[1], p.shoulder_abd[1], p.elbow_flex[1], p.hip_flex[1], p.hip_abd[1], p.knee_flex[1]};
}

// Fluent keyframe authoring in degrees.
struct P {
    Pose p = neutral_pose();
    P& arm(Side s, double sf, double sa, double e) {
        p.shoulder_flex[s] = deg(sf);
        p.shoulder_abd[s] = deg(sa);
        p.elbow_flex[s] = deg(e);
        return *this;
    }
    P& arms(double sf, double sa, double e) { return arm(kLeft, sf, sa, e).arm(kRight, sf, sa, e); }
    P& leg(Side s, double hf, double ha, double k) {
        p.hip_flex[s] = deg(hf);
        p.hip_abd[s] = deg(ha);
        p.knee_flex[s] = deg(k);
        return *this;
    }
    P& legs(double hf, double ha, double k) { return leg(kLeft, hf, ha, k).leg(kRight, hf, ha, k); }
    P& trunk(double lean, double side = 0, double twist = 0) {
        p.trunk_lean = deg(lean);
        p.trunk_side = deg(side);
        p.trunk_twist = deg(twist);
        return *this;
    }
    P& root(double x, double z = 0) {
        p.root_x = x;
        p.root_z = z;
        return *this;
    }
    P& yaw(double d) {
        p.body_yaw = deg(d);
        return *this;
    }
    P& support(double l, double r) {
        p.support = {l, r};
        return *this;
    }
    Keyframe key(double hold, double move, double jump = 0) const { return {p, hold, move, jump}; }
};

ExerciseProgram make(Exercise e, std::vector<Keyframe> k) { return {e, std::move(k)}; }

std::vector<ExerciseProgram> build_programs() {
    using E = Exercise;
    std::vector<ExerciseProgram> out;

    out.push_back(make(E::JumpingJack, {
        P{}.arms(0, 10, 20).legs(0, 4, 30).key(0.1, 0.45, 0.08),
        P{}.arms(0, 165, 40).legs(0, 18, 25).key(0.1, 0.45, 0.08),
    }));

    out.push_back(make(E::HighKick, {
        P{}.arms(20, 30, 60).leg(kLeft, 0, 4, 8).leg(kRight, 0, 4, 4).support(1, 0).key(0.5, 0.35),
        P{}.arms(20, 30, 60).arm(kLeft, 60, 20, 40).leg(kLeft, 0, 4, 8).leg(kRight, 95, 0, 2).trunk(-8)
            .support(1, 0).key(0.1, 0.6),
    }));

    out.push_back(make(E::LegBack, {
        P{}.arms(10, 15, 30).leg(kLeft, 0, 4, 10).leg(kRight, 0, 4, 4).support(1, 0).key(0.5, 0.4),
        P{}.arms(10, 15, 30).leg(kLeft, 10, 4, 10).leg(kRight, -40, 0, 75).trunk(15).support(1, 0).key(0.3, 0.6),
    }));

    out.push_back(make(E::FrontKick, {
        P{}.arms(30, 20, 100).leg(kLeft, 0, 4, 10).leg(kRight, 0, 4, 4).support(1, 0).key(0.5, 0.3),
        P{}.arms(30, 20, 100).leg(kLeft, 0, 4, 10).leg(kRight, 85, 0, 60).trunk(-5).support(1, 0).key(0.0, 0.2),
        P{}.arms(30, 20, 100).leg(kLeft, 0, 4, 10).leg(kRight, 88, 0, 10).trunk(-5).support(1, 0).key(0.15, 0.25),
        P{}.arms(30, 20, 100).leg(kLeft, 0, 4, 10).leg(kRight, 85, 0, 70).trunk(-5).support(1, 0).key(0.0, 0.7),
    }));

    {
        P guard = P{}.arms(40, 15, 125).legs(0, 6, 8);
        out.push_back(make(E::FrontPunch, {
            P(guard).key(0.4, 0.22),
            P(guard).arm(kRight, 90, 5, 8).trunk(0, 0, -20).key(0.1, 0.35),
            P(guard).key(0.4, 0.22),
            P(guard).arm(kLeft, 90, 5, 8).trunk(0, 0, 20).key(0.1, 0.35),
        }));
        out.push_back(make(E::HookPunch, {
            P(guard).key(0.4, 0.2),
            P(guard).arm(kRight, 40, 90, 125).trunk(0, 0, 15).key(0.0, 0.22),
            P(guard).arm(kRight, 50, 90, 80).trunk(0, 0, -35).key(0.35, 0.4),
            P(guard).key(0.4, 0.2),
            P(guard).arm(kLeft, 40, 90, 125).trunk(0, 0, -15).key(0.0, 0.22),
            P(guard).arm(kLeft, 50, 90, 80).trunk(0, 0, 35).key(0.35, 0.4),
        }));
    }

    out.push_back(make(E::Pirouette, {
        P{}.arms(50, 50, 70).legs(0, 4, 8).key(0.8, 0.5),
        P{}.arms(80, 40, 60).leg(kLeft, 0, 2, 4).leg(kRight, 45, 40, 100).yaw(120).support(1, 0).key(0.0, 0.5),
        P{}.arms(80, 40, 60).leg(kLeft, 0, 2, 4).leg(kRight, 45, 40, 100).yaw(240).support(1, 0).key(0.0, 0.5),
    }));

    out.push_back(make(E::Skater, {
        P{}.arm(kLeft, 60, 15, 30).arm(kRight, -40, 15, 20).leg(kRight, 30, 10, 45).leg(kLeft, -25, -20, 75)
            .trunk(30).root(-0.35).support(0, 1).key(0.35, 0.55, 0.1),
        P{}.arm(kRight, 60, 15, 30).arm(kLeft, -40, 15, 20).leg(kLeft, 30, 10, 45).leg(kRight, -25, -20, 75)
            .trunk(30).root(0.35).support(1, 0).key(0.35, 0.55, 0.1),
    }));

    out.push_back(make(E::Twist, {
        P{}.arms(60, 60, 120).legs(0, 8, 15).trunk(0, 0, -45).key(0.2, 0.6),
        P{}.arms(60, 60, 120).legs(0, 8, 15).trunk(0, 0, 45).key(0.2, 0.6),
    }));

    out.push_back(make(E::Squats, {
        P{}.arms(0, 10, 10).legs(0, 6, 4).key(0.8, 1.2),
        P{}.arms(35, 10, 5).legs(95, 10, 100).trunk(35).key(1.5, 1.0),
    }));

    out.push_back(make(E::FeetCross, {
        P{}.arms(85, 85, 10).leg(kLeft, 0, -14, 20).leg(kRight, 0, 10, 20).key(0.05, 0.35, 0.06),
        P{}.arms(85, 20, 10).legs(0, 18, 20).key(0.05, 0.35, 0.06),
        P{}.arms(85, 85, 10).leg(kRight, 0, -14, 20).leg(kLeft, 0, 10, 20).key(0.05, 0.35, 0.06),
        P{}.arms(85, 20, 10).legs(0, 18, 20).key(0.05, 0.35, 0.06),
    }));

    {
        P guard = P{}.arms(40, 15, 125).legs(0, 6, 5);
        out.push_back(make(E::ElbowPunch, {
            P(guard).key(0.4, 0.3),
            P(guard).arm(kRight, 45, 85, 125).trunk(0, 0, -35).key(0.35, 0.4),
            P(guard).key(0.4, 0.3),
            P(guard).arm(kLeft, 45, 85, 125).trunk(0, 0, 35).key(0.35, 0.4),
        }));
    }

    {
        P stance = P{}.arms(30, 20, 80).trunk(20);
        out.push_back(make(E::SideShuffle, {
            P(stance).leg(kLeft, 30, 5, 40).leg(kRight, 30, 15, 45).root(-0.35).key(0.05, 0.35),
            P(stance).leg(kLeft, 30, 20, 45).leg(kRight, 30, 3, 40).root(-0.1).support(0.8, 0.2).key(0.05, 0.35),
            P(stance).leg(kLeft, 30, 5, 40).leg(kRight, 30, 15, 45).root(0.1).support(0.2, 0.8).key(0.05, 0.35),
            P(stance).leg(kLeft, 30, 15, 45).leg(kRight, 30, 5, 40).root(0.35).key(0.05, 0.35),
            P(stance).leg(kLeft, 30, 3, 40).leg(kRight, 30, 20, 45).root(0.1).support(0.2, 0.8).key(0.05, 0.35),
            P(stance).leg(kLeft, 30, 15, 45).leg(kRight, 30, 5, 40).root(-0.1).support(0.8, 0.2).key(0.05, 0.35),
        }));
    }

    out.push_back(make(E::Batting, {
        P{}.arms(95, 45, 110).legs(10, 12, 20).trunk(15, 0, 50).support(0.6, 0.4).key(0.8, 0.35),
        P{}.arms(80, 20, 15).legs(10, 12, 20).trunk(15, 0, -60).support(0.3, 0.7).key(0.4, 1.2),
    }));

    out.push_back(make(E::SideLunge, {
        P{}.arms(60, 20, 90).legs(0, 6, 5).key(0.6, 0.8),
        P{}.arms(60, 20, 90).leg(kLeft, 60, 10, 85).leg(kRight, 0, 35, 4).trunk(30).root(0.32).support(0.85, 0.15)
            .key(1.5, 0.8),
    }));

    out.push_back(make(E::Running, {
        P{}.arm(kLeft, -35, 10, 90).arm(kRight, 45, 10, 90).leg(kLeft, 10, 3, 25).leg(kRight, 55, 3, 95).trunk(8)
            .support(1, 0).key(0.0, 0.32),
        P{}.arm(kRight, -35, 10, 90).arm(kLeft, 45, 10, 90).leg(kRight, 10, 3, 25).leg(kLeft, 55, 3, 95).trunk(8)
            .support(0, 1).key(0.0, 0.32),
    }));

    out.push_back(make(E::BallThrow, {
        P{}.arm(kRight, 140, 70, 100).arm(kLeft, 70, 30, 30).leg(kLeft, 25, 8, 20).leg(kRight, -10, 8, 15)
            .trunk(-5, 0, 40).support(0.3, 0.7).key(0.4, 0.28),
        P{}.arm(kRight, 80, 20, 10).arm(kLeft, 10, 20, 60).leg(kLeft, 25, 8, 35).leg(kRight, -10, 8, 15)
            .trunk(20, 0, -40).support(0.8, 0.2).key(0.3, 1.1),
    }));

    out.push_back(make(E::Bowling, {
        P{}.arm(kRight, -50, 10, 10).arm(kLeft, 30, 30, 30).leg(kLeft, 30, 8, 55).leg(kRight, -30, 5, 20).trunk(35)
            .support(0.8, 0.2).key(0.2, 0.5),
        P{}.arm(kRight, 70, 5, 10).arm(kLeft, 20, 40, 20).leg(kLeft, 30, 8, 55).leg(kRight, -30, 5, 20).trunk(30)
            .support(0.8, 0.2).key(0.4, 1.0),
        P{}.arms(0, 10, 15).legs(0, 6, 6).key(0.6, 0.8),
    }));

    out.push_back(make(E::KneeKick, {
        P{}.arms(100, 10, 60).leg(kLeft, 5, 4, 15).leg(kRight, 0, 4, 4).trunk(10).support(1, 0).key(0.4, 0.3),
        P{}.arms(40, 10, 100).leg(kLeft, 10, 4, 20).leg(kRight, 100, 0, 115).trunk(15).support(1, 0).key(0.15, 0.6),
    }));

    out.push_back(make(E::Woodchop, {
        P{}.arms(150, 25, 25).legs(0, 10, 10).trunk(-5, 0, 40).key(0.3, 0.5),
        P{}.arms(45, 10, 10).legs(40, 12, 55).trunk(35, 0, -45).key(0.3, 1.0),
    }));

    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.exercise < b.exercise; });
    return out;
}

// 53-bit uniform double from a 64-bit engine, portable across standard libraries.
struct Rng {
    std::mt19937_64 eng;
    explicit Rng(std::uint64_t seed) : eng(seed) {}
    double uniform() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * kPi * u2);
    }
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

Pose neutral_pose() {
    Pose p;
    p.shoulder_abd = {deg(8), deg(8)};
    p.elbow_flex = {deg(12), deg(12)};
    p.hip_abd = {deg(4), deg(4)};
    p.knee_flex = {deg(4), deg(4)};
    return p;
}

double ExerciseProgram::period() const {
    double t = 0;
    for (const auto& k : keyframes) t += k.hold_s + k.move_s;
    return t;
}

Pose ExerciseProgram::at(double t) const {
    const double T = period();
    double u = std::fmod(t, T);
    if (u < 0) u += T;
    for (std::size_t i = 0; i < keyframes.size(); ++i) {
        const Keyframe& k = keyframes[i];
        if (u < k.hold_s) return k.pose;
        u -= k.hold_s;
        if (u < k.move_s || i + 1 == keyframes.size()) {
            const Keyframe& next = keyframes[(i + 1) % keyframes.size()];
            double r = std::clamp(u / k.move_s, 0.0, 1.0);
            double w = 0.5 - 0.5 * std::cos(kPi * r);
            Pose out = k.pose;
            for_each_angle(out, k.pose, next.pose, [w](double a, double b) { return a + w * (b - a); });
            out.body_yaw = k.pose.body_yaw + w * wrap_angle(next.pose.body_yaw - k.pose.body_yaw);
            if (k.jump > 0) {
                out.support = {0, 0};
                out.hop += k.jump * std::sin(kPi * r);
            } else {
                for (std::size_t s = 0; s < 2; ++s)
                    out.support[s] = k.pose.support[s] + r * (next.pose.support[s] - k.pose.support[s]);
            }
            return out;
        }
        u -= k.move_s;
    }
    return keyframes.front().pose;
}

std::vector<std::array<Tag, 12>> ExerciseProgram::segment_tags() const {
    std::vector<std::array<Tag, 12>> out;
    for (std::size_t i = 0; i < keyframes.size(); ++i) {
        std::array<Tag, 12> hold{};
        hold.fill(Tag::hold);
        out.push_back(hold);
        auto a = limb_angles(keyframes[i].pose);
        auto b = limb_angles(keyframes[(i + 1) % keyframes.size()].pose);
        std::array<Tag, 12> move{};
        for (std::size_t j = 0; j < 12; ++j) {
            double d = b[j] - a[j];
            move[j] = std::abs(d) < 1e-9 ? Tag::hold : (d > 0 ? Tag::concentric : Tag::eccentric);
        }
        out.push_back(move);
    }
    return out;
}

const ExerciseProgram& program(Exercise e) {
    static const std::vector<ExerciseProgram> programs = build_programs();
    return programs.at(index_of(e));
}

Point3 Skeleton::forearm_com(Side s) const {
    const Point3& e = joints[s == kLeft ? LElbow : RElbow];
    const Point3& w = joints[s == kLeft ? LWrist : RWrist];
    double f = kForearmCom / kForearm;
    return {e.x + f * (w.x - e.x), e.y + f * (w.y - e.y), e.z + f * (w.z - e.z)};
}

Point3 Skeleton::shank_com(Side s) const {
    const Point3& k = joints[s == kLeft ? LKnee : RKnee];
    const Point3& a = joints[s == kLeft ? LAnkle : RAnkle];
    return {0.5 * (k.x + a.x), 0.5 * (k.y + a.y), 0.5 * (k.z + a.z)};
}

Point3 Skeleton::leg_com(Side s) const {
    const Point3& h = joints[s == kLeft ? LHip : RHip];
    const Point3& k = joints[s == kLeft ? LKnee : RKnee];
    Point3 sc = shank_com(s);
    // Thigh twice the shank mass.
    Point3 tc{0.5 * (h.x + k.x), 0.5 * (h.y + k.y), 0.5 * (h.z + k.z)};
    return {(2 * tc.x + sc.x) / 3, (2 * tc.y + sc.y) / 3, (2 * tc.z + sc.z) / 3};
}

Skeleton forward_kinematics(const Pose& pose, bool grounded) {
    Skeleton sk = body_frame(pose);
    if (!grounded) return sk;
    double lo_l = lowest_foot_point(sk, kLeft);
    double lo_r = lowest_foot_point(sk, kRight);
    double wsum = pose.support[0] + pose.support[1];
    double base = wsum > 1e-9 ? (pose.support[0] * lo_l + pose.support[1] * lo_r) / wsum : std::min(lo_l, lo_r);
    double lift = -base + pose.hop;
    Mat3 yaw = roty(pose.body_yaw);
    for (auto& j : sk.joints) {
        Point3 r = yaw * j;
        j = {r.x + pose.root_x, r.y + lift, r.z + pose.root_z};
    }
    return sk;
}

std::array<double, kFrameDim> project(const Skeleton& skeleton, const Camera& camera, const Placement& placement) {
    std::array<double, kFrameDim> out{};
    double c = std::cos(camera.yaw), s = std::sin(camera.yaw);
    for (std::size_t j = 0; j < kJoints; ++j) {
        const Point3& p = skeleton.joints[j];
        double u = p.x * c + p.z * s;
        double x = 0.5 + placement.dx + placement.scale * u / camera.width_m;
        double y = camera.ground_v + placement.dy - placement.scale * p.y / camera.height_m;
        out[j * 2] = clamp01(x);
        out[j * 2 + 1] = clamp01(y);
    }
    return out;
}

OracleConfig parse_oracle_config(const std::string& text) {
    OracleConfig c;
    std::map<std::string, double*> fields{
        {"w_gravity", &c.w_gravity},
        {"w_concentric", &c.w_concentric},
        {"hold_onset", &c.hold_onset},
        {"hold_fatigue", &c.hold_fatigue},
        {"hold_decay_s", &c.hold_decay_s},
        {"hold_fatigue_s", &c.hold_fatigue_s},
        {"hold_threshold", &c.hold_threshold},
        {"gate_tolerance", &c.gate_tolerance},
        {"noise_sigma", &c.noise_sigma},
        {"pre_roll_s", &c.pre_roll_s},
    };
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) throw std::runtime_error("oracle config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != value.size())
            throw std::runtime_error("oracle config line " + std::to_string(line_no) + ": bad number for " + key);
        if (key == "version") {
            if (v != 1) throw std::runtime_error("oracle config: unsupported version");
            c.version = 1;
            continue;
        }
        auto it = fields.find(key);
        if (it == fields.end())
            throw std::runtime_error("oracle config line " + std::to_string(line_no) + ": unknown key " + key);
        *it->second = v;
    }
    return c;
}

std::string format_oracle_config(const OracleConfig& c) {
    std::ostringstream o;
    o << std::setprecision(17);
    o << "version = " << c.version << "\n";
    o << "w_gravity = " << c.w_gravity << "\n";
    o << "w_concentric = " << c.w_concentric << "\n";
    o << "hold_onset = " << c.hold_onset << "\n";
    o << "hold_fatigue = " << c.hold_fatigue << "\n";
    o << "hold_decay_s = " << c.hold_decay_s << "\n";
    o << "hold_fatigue_s = " << c.hold_fatigue_s << "\n";
    o << "hold_threshold = " << c.hold_threshold << "\n";
    o << "gate_tolerance = " << c.gate_tolerance << "\n";
    o << "noise_sigma = " << c.noise_sigma << "\n";
    o << "pre_roll_s = " << c.pre_roll_s << "\n";
    return o.str();
}

OracleConfig load_oracle_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_oracle_config(ss.str());
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

SubjectParams SubjectParams::sample(std::string id, std::uint64_t seed) {
    Rng rng(seed);
    SubjectParams s;
    s.subject_id = std::move(id);
    for (auto& g : s.gains) g = rng.uniform(0.8, 1.2);
    s.speed = rng.uniform(0.85, 1.15);
    for (auto& o : s.offsets) o = rng.uniform(0.0, 3.0);
    return s;
}

namespace {

// Height slope of a center of mass per radian of one angle, by central
// differences on the ungrounded skeleton, normalized by the lever length.
template <class Set, class Com>
double com_slope(const Pose& p, Set set, Com com, double lever) {
    constexpr double h = 1e-4;
    Pose a = p, b = p;
    set(a, +h);
    set(b, -h);
    double ya = com(body_frame(a)).y;
    double yb = com(body_frame(b)).y;
    return (ya - yb) / (2 * h) / lever;
}

std::vector<double> derivative(const std::vector<double>& x, double dt) {
    const std::size_t n = x.size();
    std::vector<double> d(n, 0.0);
    if (n < 2) return d;
    d[0] = (x[1] - x[0]) / dt;
    d[n - 1] = (x[n - 1] - x[n - 2]) / dt;
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (x[i + 1] - x[i - 1]) / (2 * dt);
    return d;
}

}  // namespace

OracleTerms muscle_oracle(const std::vector<Pose>& traj, const SubjectParams& subject, const OracleConfig& cfg,
                          std::size_t first_output) {
    const std::size_t n = traj.size();
    if (first_output > n) throw std::invalid_argument("muscle_oracle: first_output beyond trajectory");
    const double dt = 1.0 / kFps;
    auto gate = [&](double slope_pull) { return clamp01(1.0 + slope_pull / cfg.gate_tolerance); };

    auto series = [&](auto get) {
        std::vector<double> v(n);
        for (std::size_t t = 0; t < n; ++t) v[t] = get(traj[t]);
        return v;
    };
    auto lean = series([](const Pose& p) { return p.trunk_lean; });
    auto v_lean = derivative(lean, dt);

    std::vector<double> G(n * kMuscles, 0.0), C(n * kMuscles, 0.0), holding(n * kMuscles, 0.0);

    for (Side s : {kLeft, kRight}) {
        auto ef = series([s](const Pose& p) { return p.elbow_flex[s]; });
        auto sf = series([s](const Pose& p) { return p.shoulder_flex[s]; });
        auto sa = series([s](const Pose& p) { return p.shoulder_abd[s]; });
        auto hf = series([s](const Pose& p) { return p.hip_flex[s]; });
        auto ha = series([s](const Pose& p) { return p.hip_abd[s]; });
        auto kf = series([s](const Pose& p) { return p.knee_flex[s]; });
        auto v_ef = derivative(ef, dt), v_sf = derivative(sf, dt), v_sa = derivative(sa, dt);
        auto v_hf = derivative(hf, dt), v_ha = derivative(ha, dt), v_kf = derivative(kf, dt);

        const std::size_t bicep = s == kLeft ? 0 : 1;
        const std::size_t tricep = s == kLeft ? 2 : 3;
        const std::size_t quad = s == kLeft ? 4 : 5;
        const std::size_t ham = s == kLeft ? 6 : 7;

        for (std::size_t t = 0; t < n; ++t) {
            const Pose& p = traj[t];
            double* g = &G[t * kMuscles];
            double* c = &C[t * kMuscles];
            double* hold = &holding[t * kMuscles];

            double se = com_slope(p, [s](Pose& q, double d) { q.elbow_flex[s] += d; },
                                  [s](const Skeleton& k) { return k.forearm_com(s); }, kForearmCom);
            g[bicep] = std::max(0.0, se);
            g[tricep] = std::max(0.0, -se);
            c[bicep] = std::max(0.0, v_ef[t]) * gate(se);
            c[tricep] = std::max(0.0, -v_ef[t]) * gate(-se);
            bool arm_still = std::max({std::abs(v_ef[t]), std::abs(v_sf[t]), std::abs(v_sa[t])}) < cfg.hold_threshold;
            hold[bicep] = hold[tricep] = arm_still ? 1.0 : 0.0;

            const double w = p.support[s];
            const double wmax = std::max(p.support[0], p.support[1]);
            const double loaded = wmax > 1e-9 ? w / wmax : 0.0;
            double sk = com_slope(p, [s](Pose& q, double d) { q.knee_flex[s] += d; },
                                  [s](const Skeleton& k) { return k.shank_com(s); }, kShankCom);
            double sh = com_slope(p, [s](Pose& q, double d) { q.hip_flex[s] += d; },
                                  [s](const Skeleton& k) { return k.leg_com(s); }, kLegCom);

            g[quad] = w * std::sin(std::clamp(p.knee_flex[s], 0.0, kPi / 2));
            g[ham] = w * std::max(0.0, std::sin(std::clamp(p.hip_flex[s] + p.trunk_lean, -kPi / 2, kPi / 2)));

            c[quad] = std::max(0.0, -v_kf[t]) * (loaded + (1 - loaded) * gate(-sk));
            double v_hip = v_hf[t] + loaded * v_lean[t];
            c[ham] = std::max(0.0, -v_hip) * (loaded + (1 - loaded) * gate(-sh)) +
                     std::max(0.0, v_kf[t]) * (1 - loaded) * gate(sk);
            bool leg_still = std::max({std::abs(v_hf[t]), std::abs(v_ha[t]), std::abs(v_kf[t]),
                                       loaded * std::abs(v_lean[t])}) < cfg.hold_threshold;
            hold[quad] = hold[ham] = leg_still ? 1.0 : 0.0;
        }
    }

    OracleTerms out;
    const std::size_t visible = n - first_output;
    out.gravity.resize(visible * kMuscles);
    out.concentric.resize(visible * kMuscles);
    out.hold.resize(visible * kMuscles);
    out.activation.resize(visible * kMuscles);
    for (std::size_t m = 0; m < kMuscles; ++m) {
        double onset = 0;
        bool was_holding = false;
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t i = t * kMuscles + m;
            bool h = holding[i] > 0.5;
            if (h && !was_holding) onset = static_cast<double>(t) * dt;
            was_holding = h;
            double H = 0;
            if (h) {
                double since = static_cast<double>(t) * dt - onset;
                H = G[i] * (cfg.hold_onset * std::exp(-since / cfg.hold_decay_s) +
                            cfg.hold_fatigue * (1 - std::exp(-since / cfg.hold_fatigue_s)));
            }
            if (t < first_output) continue;
            const std::size_t o = (t - first_output) * kMuscles + m;
            out.gravity[o] = G[i];
            out.concentric[o] = C[i];
            out.hold[o] = H;
            out.activation[o] =
                subject.gains[m] * std::max(0.0, cfg.w_gravity * G[i] + cfg.w_concentric * C[i] + H);
        }
    }
    return out;
}

ClipVariation sample_variation(std::uint64_t clip_seed) {
    Rng rng(mix_seed(clip_seed, 0x7661726961ULL));
    ClipVariation v;
    v.phase_s = rng.uniform(0.0, 10.0);
    v.tempo = rng.uniform(0.92, 1.08);
    v.amplitude = rng.uniform(0.9, 1.1);
    v.placement.dx = rng.uniform(-0.06, 0.06);
    v.placement.dy = rng.uniform(-0.03, 0.03);
    v.placement.scale = rng.uniform(0.93, 1.07);
    return v;
}

std::vector<Pose> clip_trajectory(Exercise e, const SubjectParams& subject, const ClipVariation& variation,
                                  std::size_t frames, std::size_t pre_roll_frames) {
    const ExerciseProgram& prog = program(e);
    const Pose base = neutral_pose();
    const double rate = subject.speed * variation.tempo;
    std::vector<Pose> out;
    out.reserve(frames + pre_roll_frames);
    for (std::size_t i = 0; i < frames + pre_roll_frames; ++i) {
        double t = (static_cast<double>(i) - static_cast<double>(pre_roll_frames)) / kFps;
        Pose p = prog.at(variation.phase_s + t * rate);
        Pose scaled = p;
        for_each_angle(scaled, base, p,
                       [a = variation.amplitude](double n0, double v) { return n0 + a * (v - n0); });
        out.push_back(scaled);
    }
    return out;
}

ClipOutput generate_clip_detailed(Exercise e, const SubjectParams& subject, double duration_s, std::uint64_t seed,
                                  const OracleConfig& config) {
    if (!(duration_s >= kMinDuration))
        throw std::invalid_argument("generate_clip: duration must be at least 3 s, got " + std::to_string(duration_s));
    const auto frames = static_cast<std::size_t>(std::lround(duration_s * kFps));
    ClipVariation var = sample_variation(seed);
    const auto pre = static_cast<std::size_t>(std::lround(config.pre_roll_s * kFps));
    auto traj = clip_trajectory(e, subject, var, frames, pre);

    ClipOutput out;
    Clip& c = out.clip;
    c.subject_id = subject.subject_id;
    c.exercise = e;
    c.fps = kFps;
    c.keypoints.frames = frames;
    c.keypoints.coords.reserve(frames * kFrameDim);
    Camera cam;
    for (std::size_t t = pre; t < traj.size(); ++t) {
        auto k = project(forward_kinematics(traj[t]), cam, var.placement);
        c.keypoints.coords.insert(c.keypoints.coords.end(), k.begin(), k.end());
    }
    out.terms = muscle_oracle(traj, subject, config, pre);
    Rng noise(mix_seed(seed, 0x6e6f697365ULL));
    c.emg_raw.resize(frames * kMuscles);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t m = 0; m < kMuscles; ++m) {
            double v = out.terms.activation[t * kMuscles + m] + subject.offsets[m] + config.noise_sigma * noise.normal();
            c.emg_raw[t * kMuscles + m] = std::max(0.0, v);
        }
    return out;
}

Clip generate_clip(Exercise e, const SubjectParams& subject, double duration_s, std::uint64_t seed,
                   const OracleConfig& config) {
    return generate_clip_detailed(e, subject, duration_s, seed, config).clip;
}

CorpusSpec default_corpus_spec(std::size_t subjects, std::size_t clips_per_pair, double duration_s,
                               std::uint64_t seed) {
    CorpusSpec spec;
    for (std::size_t i = 0; i < subjects; ++i)
        spec.subjects.push_back(SubjectParams::sample("S" + std::to_string(i + 1), mix_seed(seed, 1000 + i)));
    spec.clips_per_subject.assign(subjects, clips_per_pair);
    spec.duration_s = duration_s;
    spec.seed = seed;
    return spec;
}

Dataset generate_corpus(const CorpusSpec& spec) {
    if (spec.clips_per_subject.size() != spec.subjects.size())
        throw std::invalid_argument("generate_corpus: clips_per_subject must have one entry per subject");
    if (!(spec.duration_s >= kMinDuration)) throw std::invalid_argument("generate_corpus: duration must be at least 3 s");
    std::vector<Exercise> exercises = spec.exercises;
    if (exercises.empty()) exercises.assign(all_exercises().begin(), all_exercises().end());

    Dataset ds;
    for (std::size_t si = 0; si < spec.subjects.size(); ++si) {
        const SubjectParams& subject = spec.subjects[si];
        for (Exercise e : exercises) {
            for (std::size_t r = 0; r < spec.clips_per_subject[si]; ++r) {
                std::uint64_t seed = mix_seed(mix_seed(mix_seed(spec.seed, si), index_of(e)), r);
                Clip c = generate_clip(e, subject, spec.duration_s, seed, spec.oracle);
                std::ostringstream id;
                id << subject.subject_id << "_" << exercise_name(e) << "_" << std::setw(2) << std::setfill('0') << r;
                c.clip_id = id.str();
                ds.clips.push_back(std::move(c));
            }
        }
    }
    assign_default_splits(ds);
    std::vector<const Clip*> train;
    for (auto i : ds.indices(Split::train)) train.push_back(&ds.clips[i]);
    if (!train.empty()) ds.norm_stats = fit_normalizer(std::span<const Clip* const>(train));
    return ds;
}

}  // namespace myograph::synth
