#include "myograph/datamodel.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace myograph {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kMuscles> kMuscleNames{
    "LeftBicep", "RightBicep", "LeftTricep", "RightTricep", "LeftQuad", "RightQuad", "LeftHamstring", "RightHamstring",
};

constexpr std::array<std::string_view, kExercises> kExerciseNames{
    "JumpingJack", "HighKick",   "LegBack",     "FrontKick", "FrontPunch", "HookPunch", "Pirouette",
    "Skater",      "Twist",      "Squats",      "FeetCross", "ElbowPunch", "SideShuffle", "Batting",
    "SideLunge",   "Running",    "BallThrow",   "Bowling",   "KneeKick",   "Woodchop",
};

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
    throw std::runtime_error("line " + std::to_string(line) + ": " + what);
}

json header_json(const Dataset& ds) {
    json h;
    h["format"] = "mia-jsonl";
    h["version"] = 1;
    h["fps"] = kFps;
    json muscles = json::array();
    for (auto n : kMuscleNames) muscles.push_back(std::string(n));
    h["muscles"] = muscles;
    json exercises = json::array();
    for (auto n : kExerciseNames) exercises.push_back(std::string(n));
    h["exercises"] = exercises;
    if (ds.norm_stats) {
        json ns = json::object();
        for (std::size_t m = 0; m < kMuscles; ++m)
            ns[std::string(kMuscleNames[m])] = {ds.norm_stats->min[m], ds.norm_stats->max[m]};
        h["norm_stats"] = ns;
    }
    return h;
}

json clip_json(const Clip& c) {
    json kp = json::array();
    for (std::size_t t = 0; t < c.frames(); ++t) {
        json frame = json::array();
        for (std::size_t j = 0; j < kJoints; ++j) frame.push_back({c.keypoints.at(t, j, 0), c.keypoints.at(t, j, 1)});
        kp.push_back(std::move(frame));
    }
    json emg = json::array();
    for (std::size_t t = 0; t < c.frames(); ++t) {
        json row = json::array();
        for (std::size_t m = 0; m < kMuscles; ++m) row.push_back(c.emg_raw[t * kMuscles + m]);
        emg.push_back(std::move(row));
    }
    json out;
    out["clip_id"] = c.clip_id;
    out["subject_id"] = c.subject_id;
    out["exercise"] = std::string(exercise_name(c.exercise));
    out["keypoints"] = std::move(kp);
    out["emg_raw"] = std::move(emg);
    return out;
}

void check_header(const json& h) {
    if (!h.is_object()) fail_line(1, "header is not an object");
    if (h.value("format", "") != "mia-jsonl") fail_line(1, "format must be \"mia-jsonl\"");
    if (!h.contains("version") || !h["version"].is_number_integer() || h["version"].get<int>() != 1)
        fail_line(1, "unsupported version");
    if (h.contains("fps") && h["fps"].get<int>() != kFps) fail_line(1, "fps must be 10");
    if (h.contains("muscles")) {
        const auto& m = h["muscles"];
        if (!m.is_array() || m.size() != kMuscles) fail_line(1, "muscles must list 8 names");
        for (std::size_t i = 0; i < kMuscles; ++i)
            if (m[i].get<std::string>() != kMuscleNames[i]) fail_line(1, "muscle order mismatch at " + std::to_string(i));
    }
    if (h.contains("exercises")) {
        const auto& e = h["exercises"];
        if (!e.is_array() || e.size() != kExercises) fail_line(1, "exercises must list 20 names");
        for (std::size_t i = 0; i < kExercises; ++i)
            if (e[i].get<std::string>() != kExerciseNames[i])
                fail_line(1, "exercise order mismatch at " + std::to_string(i));
    }
}

Clip parse_clip(const json& j, std::size_t line) {
    Clip c;
    try {
        c.clip_id = j.at("clip_id").get<std::string>();
        c.subject_id = j.at("subject_id").get<std::string>();
        auto ex = exercise_from_name(j.at("exercise").get<std::string>());
        if (!ex) fail_line(line, "unknown exercise \"" + j.at("exercise").get<std::string>() + "\"");
        c.exercise = *ex;
        const auto& kp = j.at("keypoints");
        const auto& emg = j.at("emg_raw");
        if (!kp.is_array() || !emg.is_array()) fail_line(line, "keypoints and emg_raw must be arrays");
        if (kp.size() != emg.size())
            fail_line(line, "clip " + c.clip_id + ": keypoints have " + std::to_string(kp.size()) +
                                " frames but emg_raw has " + std::to_string(emg.size()));
        const std::size_t frames = kp.size();
        c.keypoints.frames = frames;
        c.keypoints.coords.reserve(frames * kFrameDim);
        c.emg_raw.reserve(frames * kMuscles);
        for (std::size_t t = 0; t < frames; ++t) {
            const auto& frame = kp[t];
            if (!frame.is_array() || frame.size() != kJoints)
                fail_line(line, "clip " + c.clip_id + ": frame " + std::to_string(t) + " must have 25 joints");
            for (const auto& joint : frame) {
                if (!joint.is_array() || joint.size() != kCoords)
                    fail_line(line, "clip " + c.clip_id + ": joint must have 2 coordinates");
                c.keypoints.coords.push_back(joint[0].get<double>());
                c.keypoints.coords.push_back(joint[1].get<double>());
            }
            const auto& row = emg[t];
            if (!row.is_array() || row.size() != kMuscles)
                fail_line(line, "clip " + c.clip_id + ": emg frame " + std::to_string(t) + " must have 8 values");
            for (const auto& v : row) {
                double x = v.get<double>();
                if (x < 0) fail_line(line, "clip " + c.clip_id + ": negative emg value");
                c.emg_raw.push_back(x);
            }
        }
    } catch (const json::exception& e) {
        fail_line(line, e.what());
    }
    return c;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::string_view muscle_name(Muscle m) { return kMuscleNames.at(index_of(m)); }

std::optional<Muscle> muscle_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kMuscles; ++i)
        if (kMuscleNames[i] == name) return static_cast<Muscle>(i);
    return std::nullopt;
}

std::string_view exercise_name(Exercise e) { return kExerciseNames.at(index_of(e)); }

std::optional<Exercise> exercise_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kExercises; ++i)
        if (kExerciseNames[i] == name) return static_cast<Exercise>(i);
    return std::nullopt;
}

const std::array<Muscle, kMuscles>& all_muscles() {
    static const auto list = [] {
        std::array<Muscle, kMuscles> a{};
        for (std::size_t i = 0; i < kMuscles; ++i) a[i] = static_cast<Muscle>(i);
        return a;
    }();
    return list;
}

const std::array<Exercise, kExercises>& all_exercises() {
    static const auto list = [] {
        std::array<Exercise, kExercises> a{};
        for (std::size_t i = 0; i < kExercises; ++i) a[i] = static_cast<Exercise>(i);
        return a;
    }();
    return list;
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

const Clip& Dataset::clip(const std::string& id) const {
    for (const auto& c : clips)
        if (c.clip_id == id) return c;
    throw std::out_of_range("no clip " + id);
}

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        auto it = splits.find(clips[i].clip_id);
        if (it != splits.end() && it->second == split) out.push_back(i);
    }
    return out;
}

NormStats fit_normalizer(std::span<const Clip* const> clips) {
    NormStats s;
    s.min.fill(std::numeric_limits<double>::infinity());
    s.max.fill(-std::numeric_limits<double>::infinity());
    bool any = false;
    for (const Clip* c : clips) {
        for (std::size_t t = 0; t < c->frames(); ++t) {
            for (std::size_t m = 0; m < kMuscles; ++m) {
                double v = c->emg_raw[t * kMuscles + m];
                s.min[m] = std::min(s.min[m], v);
                s.max[m] = std::max(s.max[m], v);
                any = true;
            }
        }
    }
    if (!any) throw std::invalid_argument("fit_normalizer: no frames");
    for (std::size_t m = 0; m < kMuscles; ++m)
        if (!(s.max[m] > s.min[m]))
            throw std::invalid_argument("fit_normalizer: constant signal for muscle " + std::string(kMuscleNames[m]));
    return s;
}

NormStats fit_normalizer(std::span<const Clip> clips) {
    std::vector<const Clip*> ptrs;
    for (const auto& c : clips) ptrs.push_back(&c);
    return fit_normalizer(std::span<const Clip* const>(ptrs));
}

EmgSequence normalize_emg(std::span<const double> raw, std::size_t frames, const NormStats& stats) {
    if (raw.size() != frames * kMuscles)
        throw std::invalid_argument("normalize_emg: expected " + std::to_string(frames * kMuscles) + " values, got " +
                                    std::to_string(raw.size()));
    EmgSequence out;
    out.frames = frames;
    out.values.resize(raw.size());
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t m = 0; m < kMuscles; ++m) {
            double span = stats.max[m] - stats.min[m];
            double v = span > 0 ? 100.0 * (raw[t * kMuscles + m] - stats.min[m]) / span : 0.0;
            out.values[t * kMuscles + m] = std::clamp(v, 0.0, 100.0);
        }
    }
    return out;
}

bool valid_window_length(std::size_t length) {
    return std::find(kWindowLengths.begin(), kWindowLengths.end(), length) != kWindowLengths.end();
}

std::vector<Window> window_clip(const Clip& clip, const NormStats& stats, std::size_t length, std::size_t stride) {
    if (length == 0 || stride == 0) throw std::invalid_argument("window_clip: length and stride must be positive");
    std::vector<Window> out;
    const std::size_t frames = clip.frames();
    if (length > frames) return out;
    EmgSequence emg = normalize_emg(clip.emg_raw, frames, stats);
    for (std::size_t start = 0; start + length <= frames; start += stride) {
        Window w;
        w.clip_id = clip.clip_id;
        w.subject_id = clip.subject_id;
        w.exercise = clip.exercise;
        w.start = start;
        w.length = length;
        auto kp_begin = clip.keypoints.coords.begin() + static_cast<std::ptrdiff_t>(start * kFrameDim);
        w.keypoints.assign(kp_begin, kp_begin + static_cast<std::ptrdiff_t>(length * kFrameDim));
        auto emg_begin = emg.values.begin() + static_cast<std::ptrdiff_t>(start * kMuscles);
        w.emg.assign(emg_begin, emg_begin + static_cast<std::ptrdiff_t>(length * kMuscles));
        out.push_back(std::move(w));
    }
    return out;
}

ClipPartition split_leave_one_exercise_out(const Dataset& dataset, Exercise held_out) {
    ClipPartition p;
    for (std::size_t i = 0; i < dataset.clips.size(); ++i)
        (dataset.clips[i].exercise == held_out ? p.test : p.train).push_back(i);
    if (p.test.empty())
        throw std::invalid_argument("dataset has no clips of " + std::string(exercise_name(held_out)));
    return p;
}

void assign_default_splits(Dataset& dataset) {
    std::map<std::pair<std::string, Exercise>, std::vector<std::string>> groups;
    for (const auto& c : dataset.clips) groups[{c.subject_id, c.exercise}].push_back(c.clip_id);
    dataset.splits.clear();
    for (auto& [key, ids] : groups) {
        std::sort(ids.begin(), ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            Split s = Split::train;
            if (ids.size() >= 2 && i + 1 == ids.size()) s = Split::test;
            else if (ids.size() >= 3 && i + 2 == ids.size()) s = Split::val;
            dataset.splits[ids[i]] = s;
        }
    }
}

void normalize_keypoint_pixels(std::span<double> coords, double width, double height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
    if (coords.size() % 2 != 0) throw std::invalid_argument("coordinate count must be even");
    for (std::size_t i = 0; i < coords.size(); i += 2) {
        coords[i] /= width;
        coords[i + 1] /= height;
    }
}

std::string dataset_to_jsonl(const Dataset& dataset) {
    std::string out = header_json(dataset).dump();
    out += '\n';
    for (const auto& c : dataset.clips) {
        out += clip_json(c).dump();
        out += '\n';
    }
    return out;
}

Dataset dataset_from_jsonl(std::string_view text) {
    Dataset ds;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            fail_line(line_no, std::string("malformed JSON: ") + e.what());
        }
        if (!have_header) {
            if (line_no != 1) fail_line(line_no, "header must be the first line");
            check_header(j);
            if (j.contains("norm_stats") && !j["norm_stats"].is_null()) {
                NormStats s;
                try {
                    const auto& ns = j["norm_stats"];
                    if (!ns.is_object() || ns.size() != kMuscles) fail_line(1, "norm_stats must map 8 muscles");
                    for (std::size_t m = 0; m < kMuscles; ++m) {
                        const auto& pair = ns.at(std::string(kMuscleNames[m]));
                        if (!pair.is_array() || pair.size() != 2) fail_line(1, "norm_stats entries must be [min, max]");
                        s.min[m] = pair[0].get<double>();
                        s.max[m] = pair[1].get<double>();
                    }
                } catch (const json::exception& e) {
                    fail_line(1, std::string("norm_stats: ") + e.what());
                }
                ds.norm_stats = s;
            }
            have_header = true;
            continue;
        }
        ds.clips.push_back(parse_clip(j, line_no));
    }
    if (!have_header) fail_line(1, "missing header");
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
    try {
        return dataset_from_jsonl(read_file(path));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    write_file(path, dataset_to_jsonl(dataset));
}

std::map<std::string, Split> load_splits(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": malformed JSON: " + e.what());
    }
    std::map<std::string, Split> out;
    for (Split s : {Split::train, Split::val, Split::test}) {
        std::string key(split_name(s));
        if (!j.contains(key)) continue;
        for (const auto& id : j[key]) {
            auto [it, inserted] = out.emplace(id.get<std::string>(), s);
            if (!inserted) throw std::runtime_error(path.string() + ": clip " + it->first + " listed twice");
        }
    }
    return out;
}

void save_splits(const Dataset& dataset, const std::filesystem::path& path) {
    json j = {{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
    for (const auto& c : dataset.clips) {
        auto it = dataset.splits.find(c.clip_id);
        if (it == dataset.splits.end()) continue;
        j[std::string(split_name(it->second))].push_back(c.clip_id);
    }
    write_file(path, j.dump(2) + "\n");
}

}  // namespace myograph
