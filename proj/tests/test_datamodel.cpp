#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "myograph/datamodel.hpp"
#include "myograph/synthgen.hpp"

using namespace myograph;

namespace {

Clip flat_clip(std::string id, Exercise e, std::size_t frames, std::string subject = "S1") {
    Clip c;
    c.clip_id = std::move(id);
    c.subject_id = std::move(subject);
    c.exercise = e;
    c.keypoints.frames = frames;
    c.keypoints.coords.resize(frames * kFrameDim);
    for (std::size_t i = 0; i < c.keypoints.coords.size(); ++i) c.keypoints.coords[i] = (i % 97) / 97.0;
    c.emg_raw.resize(frames * kMuscles);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t m = 0; m < kMuscles; ++m) c.emg_raw[t * kMuscles + m] = double(t) + m;
    return c;
}

NormStats unit_stats() {
    NormStats s;
    s.min.fill(0);
    s.max.fill(100);
    return s;
}

std::string replace_first(std::string s, const std::string& from, const std::string& to) {
    auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    return s.replace(pos, from.size(), to);
}

const Dataset& small_corpus() {
    static const Dataset ds = synth::generate_corpus(synth::default_corpus_spec(2, 3, 4, 5));
    return ds;
}

}  // namespace

TEST_CASE("enumerations keep their canonical order") {
    CHECK(all_muscles().size() == 8);
    CHECK(all_exercises().size() == 20);
    CHECK(muscle_name(Muscle::LeftBicep) == "LeftBicep");
    CHECK(muscle_name(Muscle::RightHamstring) == "RightHamstring");
    CHECK(exercise_name(Exercise::JumpingJack) == "JumpingJack");
    CHECK(exercise_name(Exercise::Woodchop) == "Woodchop");
    for (Exercise e : all_exercises()) CHECK(exercise_from_name(exercise_name(e)) == e);
    for (Muscle m : all_muscles()) CHECK(muscle_from_name(muscle_name(m)) == m);
    CHECK_FALSE(exercise_from_name("Burpee").has_value());
}

TEST_CASE("fit_normalizer takes per-muscle extremes") {
    Clip c = flat_clip("a", Exercise::Squats, 3);
    c.emg_raw[0 * kMuscles] = 0.2;
    c.emg_raw[1 * kMuscles] = 4.8;
    c.emg_raw[2 * kMuscles] = 1.0;
    auto s = fit_normalizer(std::span<const Clip>(&c, 1));
    CHECK(s.min[0] == 0.2);
    CHECK(s.max[0] == 4.8);

    Clip d = flat_clip("b", Exercise::Squats, 3);
    for (auto& v : d.emg_raw) v += 10;
    std::vector<Clip> both{c, d};
    auto sb = fit_normalizer(both);
    auto sd = fit_normalizer(std::span<const Clip>(&d, 1));
    for (std::size_t m = 0; m < kMuscles; ++m) {
        CHECK(sb.min[m] == std::min(s.min[m], sd.min[m]));
        CHECK(sb.max[m] == std::max(s.max[m], sd.max[m]));
    }
}

TEST_CASE("constant channel is rejected and named") {
    Clip c = flat_clip("a", Exercise::Squats, 4);
    for (std::size_t t = 0; t < 4; ++t) c.emg_raw[t * kMuscles + index_of(Muscle::RightQuad)] = 3.0;
    try {
        fit_normalizer(std::span<const Clip>(&c, 1));
        FAIL("constant channel accepted");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("RightQuad") != std::string::npos);
    }
}

TEST_CASE("normalize_emg endpoints, midpoint and clamp") {
    NormStats s;
    s.min.fill(2);
    s.max.fill(6);
    std::vector<double> raw(4 * kMuscles);
    for (std::size_t m = 0; m < kMuscles; ++m) {
        raw[0 * kMuscles + m] = 2;
        raw[1 * kMuscles + m] = 6;
        raw[2 * kMuscles + m] = 4;
        raw[3 * kMuscles + m] = 9;
    }
    auto e = normalize_emg(raw, 4, s);
    for (Muscle m : all_muscles()) {
        CHECK(e.at(0, m) == 0);
        CHECK(e.at(1, m) == 100);
        CHECK(e.at(2, m) == 50);
        CHECK(e.at(3, m) == 100);
    }
}

TEST_CASE("normalizing the fitted set spans exactly 0..100") {
    const auto& ds = small_corpus();
    std::vector<const Clip*> train;
    for (std::size_t i : ds.indices(Split::train)) train.push_back(&ds.clips[i]);
    auto stats = fit_normalizer(train);
    std::array<double, kMuscles> lo, hi;
    lo.fill(1e9);
    hi.fill(-1e9);
    for (const Clip* c : train) {
        auto e = normalize_emg(c->emg_raw, c->frames(), stats);
        for (std::size_t t = 0; t < e.frames; ++t)
            for (std::size_t m = 0; m < kMuscles; ++m) {
                lo[m] = std::min(lo[m], e.values[t * kMuscles + m]);
                hi[m] = std::max(hi[m], e.values[t * kMuscles + m]);
            }
    }
    for (std::size_t m = 0; m < kMuscles; ++m) {
        CHECK(lo[m] == 0.0);
        CHECK(hi[m] == 100.0);
    }
}

TEST_CASE("window counts") {
    auto s = unit_stats();
    CHECK(window_clip(flat_clip("a", Exercise::Squats, 90), s, 30, 15).size() == 5);
    CHECK(window_clip(flat_clip("a", Exercise::Squats, 30), s, 30, 30).size() == 1);
    CHECK(window_clip(flat_clip("a", Exercise::Squats, 29), s, 30, 1).empty());
    for (std::size_t t : {1u, 7u, 30u, 31u, 300u})
        for (std::size_t len : kWindowLengths)
            for (std::size_t stride : {1u, 5u, 30u}) {
                auto w = window_clip(flat_clip("a", Exercise::Squats, t), s, len, stride);
                std::size_t expected = len > t ? 0 : (t - len) / stride + 1;
                CHECK(w.size() == expected);
            }
}

TEST_CASE("non-overlapping windows reconstruct a prefix of the clip") {
    Clip c = flat_clip("a", Exercise::Squats, 95);
    auto s = unit_stats();
    auto ws = window_clip(c, s, 20, 20);
    std::vector<double> kp, emg;
    for (const auto& w : ws) {
        CHECK(w.start + w.length <= c.frames());
        kp.insert(kp.end(), w.keypoints.begin(), w.keypoints.end());
        emg.insert(emg.end(), w.emg.begin(), w.emg.end());
    }
    REQUIRE(kp.size() == 80 * kFrameDim);
    CHECK(std::equal(kp.begin(), kp.end(), c.keypoints.coords.begin()));
    auto full = normalize_emg(c.emg_raw, c.frames(), s);
    CHECK(std::equal(emg.begin(), emg.end(), full.values.begin()));
}

TEST_CASE("leave-one-exercise-out partitions are exact") {
    const auto& ds = small_corpus();
    std::vector<int> in_test(ds.clips.size(), 0);
    for (Exercise e : all_exercises()) {
        auto p = split_leave_one_exercise_out(ds, e);
        std::set<Exercise> train_ex, test_ex;
        for (auto i : p.train) train_ex.insert(ds.clips[i].exercise);
        for (auto i : p.test) test_ex.insert(ds.clips[i].exercise);
        CHECK(train_ex.size() == 19);
        CHECK(test_ex == std::set<Exercise>{e});
        CHECK(p.train.size() + p.test.size() == ds.clips.size());
        std::set<std::size_t> all(p.train.begin(), p.train.end());
        all.insert(p.test.begin(), p.test.end());
        CHECK(all.size() == ds.clips.size());
        for (auto i : p.test) ++in_test[i];
    }
    for (int n : in_test) CHECK(n == 1);

    Dataset partial;
    partial.clips.push_back(flat_clip("a", Exercise::Squats, 10));
    CHECK_THROWS_AS(split_leave_one_exercise_out(partial, Exercise::Running), std::invalid_argument);
}

TEST_CASE("default splits: last clip test, second-to-last val") {
    Dataset ds;
    for (std::string id : {"c0", "c1", "c2", "c3"}) ds.clips.push_back(flat_clip(id, Exercise::Batting, 10));
    ds.clips.push_back(flat_clip("d0", Exercise::Running, 10));
    ds.clips.push_back(flat_clip("d1", Exercise::Running, 10));
    assign_default_splits(ds);
    CHECK(ds.splits.at("c0") == Split::train);
    CHECK(ds.splits.at("c1") == Split::train);
    CHECK(ds.splits.at("c2") == Split::val);
    CHECK(ds.splits.at("c3") == Split::test);
    CHECK(ds.splits.at("d0") == Split::train);
    CHECK(ds.splits.at("d1") == Split::test);
}

TEST_CASE("jsonl round trip is lossless") {
    const auto& ds = small_corpus();
    auto text = dataset_to_jsonl(ds);
    auto back = dataset_from_jsonl(text);
    CHECK(back.clips == ds.clips);
    CHECK(back.norm_stats == ds.norm_stats);
    CHECK(dataset_to_jsonl(back) == text);

    auto dir = std::filesystem::temp_directory_path() / "myograph_dm_test";
    std::filesystem::create_directories(dir);
    save_dataset(ds, dir / "c.jsonl");
    save_splits(ds, dir / "c.splits.json");
    auto loaded = load_dataset(dir / "c.jsonl");
    loaded.splits = load_splits(dir / "c.splits.json");
    CHECK(loaded == ds);
    std::filesystem::remove_all(dir);
}

TEST_CASE("jsonl errors carry line numbers") {
    Dataset ds;
    ds.clips.push_back(flat_clip("first", Exercise::Squats, 3));
    ds.clips.push_back(flat_clip("second", Exercise::Squats, 3));
    auto text = dataset_to_jsonl(ds);

    auto expect_error = [](const std::string& t, const std::string& needle) {
        try {
            dataset_from_jsonl(t);
            FAIL("accepted: " << needle);
        } catch (const std::exception& e) {
            INFO(std::string(e.what()));
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    expect_error(replace_first(text, "\"version\":1", "\"version\":2"), "line 1");
    expect_error(replace_first(text, "\"exercise\":\"Squats\"", "\"exercise\":\"Burpee\""), "line 2");
    expect_error(replace_first(text, "\"exercise\":\"Squats\"", "\"exercise\":\"Burpee\""), "Burpee");

    // Drop the last emg frame of the second clip: T mismatch named with clip and line.
    std::istringstream in(text);
    std::string header, l1, l2;
    std::getline(in, header);
    std::getline(in, l1);
    std::getline(in, l2);
    auto j = nlohmann::json::parse(l2);
    j["emg_raw"].erase(j["emg_raw"].size() - 1);
    auto truncated = j.dump();
    expect_error(header + "\n" + l1 + "\n" + truncated + "\n", "line 3");
    expect_error(header + "\n" + l1 + "\n" + truncated + "\n", "second");
    expect_error(header + "\n" + l1 + "\n{not json\n", "line 3");
}

TEST_CASE("split files reject duplicates") {
    auto dir = std::filesystem::temp_directory_path() / "myograph_split_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "s.json");
        out << R"({"train":["a","b"],"val":[],"test":["a"]})";
    }
    CHECK_THROWS(load_splits(dir / "s.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("pixel coordinates normalize by image size") {
    std::vector<double> px{320, 240, 640, 0};
    normalize_keypoint_pixels(px, 640, 480);
    CHECK(px == std::vector<double>{0.5, 0.5, 1.0, 0.0});
}
