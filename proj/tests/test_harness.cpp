#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mmdet/pipeline.hpp"
#include "mmdet/synth.hpp"

using namespace mmdet;
namespace fs = std::filesystem;

namespace {

SynthSpec tiny_spec() {
    SynthSpec s;
    s.num_videos = 3;
    s.frames = 24;
    s.height = 16;
    s.width = 16;
    s.classes = 3;
    s.seed = 11;
    return s;
}

RunConfig tiny_run_config() {
    RunConfig c;
    c.profile = "desk";
    c.seed = 11;
    c.model.T = 24;
    c.model.Z = 8;
    c.model.L = 2;
    c.model.H = 2;
    c.model.Zq = c.model.Zk = c.model.Zv = 8;
    c.model.Zm = 4;
    c.model.C = 3;
    c.model.epochs = 5;
    c.model.seed = 11;
    c.synth = tiny_spec();
    c.target_accuracy = -1.0;  // run the full (short) epoch budget
    c.threads = 2;
    return c;
}

fs::path tmp_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / "mmdet_harness_tests" / name;
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("synth spec validation") {
    SynthSpec s = tiny_spec();
    CHECK_NOTHROW(s.validate());
    s.height = 8;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = tiny_spec();
    s.classes = 1;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = tiny_spec();
    s.pan_min = 3.0;
    s.pan_max = 1.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("generate_dataset is deterministic in the spec and sensitive to the seed") {
    SynthSpec s = tiny_spec();
    auto a = generate_dataset(s);
    auto b = generate_dataset(s);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].labels == b[i].labels);
        CHECK(a[i].frames.data == b[i].frames.data);
        REQUIRE(a[i].flows.size() == b[i].flows.size());
        for (std::size_t f = 0; f < a[i].flows.size(); ++f) CHECK(a[i].flows[f].uv == b[i].flows[f].uv);
    }
    s.seed = 12;
    auto c = generate_dataset(s);
    bool differs = false;
    for (std::size_t i = 0; i < a.size() && !differs; ++i) differs = a[i].labels != c[i].labels;
    CHECK(differs);
}

TEST_CASE("ground-truth segments are exactly the non-idle label runs") {
    SynthSpec s = tiny_spec();
    s.num_videos = 5;
    s.frames = 64;
    for (const VideoSample& v : generate_dataset(s)) {
        // rebuild segments from labels and compare
        std::vector<ActionSegment> rebuilt;
        int t = 0;
        const int T = static_cast<int>(v.labels.size());
        while (t < T) {
            if (v.labels[t] == 0) {
                ++t;
                continue;
            }
            int e = t;
            while (e + 1 < T && v.labels[e + 1] == v.labels[t]) ++e;
            rebuilt.push_back(ActionSegment{v.name, v.labels[t], t, e, 0.0});
            t = e + 1;
        }
        REQUIRE(v.segments.size() == rebuilt.size());
        for (std::size_t i = 0; i < rebuilt.size(); ++i) {
            CHECK(v.segments[i].cls == rebuilt[i].cls);
            CHECK(v.segments[i].start == rebuilt[i].start);
            CHECK(v.segments[i].end == rebuilt[i].end);
            CHECK(v.segments[i].cls > 0);
        }
    }
}

TEST_CASE("blob flow carries the class direction on top of the pan") {
    SynthSpec s = tiny_spec();
    s.num_videos = 2;
    s.frames = 48;
    s.pan_min = 2.0;
    s.pan_max = 4.0;
    for (const VideoSample& v : generate_dataset(s)) {
        for (int f = 0; f < s.frames; ++f) {
            if (v.labels[f] == 0) continue;
            REQUIRE(v.boxes[f].size() == 1);
            const Box& b = v.boxes[f][0];
            const int cx = static_cast<int>(b.x0) + 4, cy = static_cast<int>(b.y0) + 4;
            const auto [pu, pv] = v.pans[f];
            const double rel_u = v.flows[f].u(cx, cy) - pu;
            const double rel_v = v.flows[f].v(cx, cy) - pv;
            const bool horizontal = (v.labels[f] - 1) % 2 == 0;
            CHECK(rel_u == doctest::Approx(horizontal ? 2.0 : 0.0));
            CHECK(rel_v == doctest::Approx(horizontal ? 0.0 : 2.0));
        }
    }
}

TEST_CASE("frames file round trip is bit exact") {
    const fs::path p = tmp_dir("frames") / "frames.dat";
    SynthSpec s = tiny_spec();
    s.num_videos = 1;
    VideoFrames f = generate_dataset(s)[0].frames;
    write_frames(f, p);
    VideoFrames back = read_frames(p);
    CHECK(back.frames == f.frames);
    CHECK(back.height == f.height);
    CHECK(back.width == f.width);
    CHECK(back.channels == f.channels);
    CHECK(back.data == f.data);
}

TEST_CASE("dataset write/read round trip") {
    const fs::path dir = tmp_dir("dataset");
    SynthSpec s = tiny_spec();
    s.noise = 0.1;
    s.pan_min = 1.0;
    s.pan_max = 2.0;
    auto videos = generate_dataset(s);
    write_dataset(videos, s, dir);
    LoadedDataset ds = read_dataset(dir);
    REQUIRE(ds.videos.size() == videos.size());
    std::size_t gt_total = 0;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        CHECK(ds.videos[i].name == videos[i].name);
        CHECK(ds.videos[i].labels == videos[i].labels);
        CHECK(ds.videos[i].frames.data == videos[i].frames.data);
        REQUIRE(ds.videos[i].flows.size() == videos[i].flows.size());
        for (std::size_t f = 0; f < videos[i].flows.size(); ++f)
            for (std::size_t k = 0; k < videos[i].flows[f].uv.size(); ++k)
                // .flo storage narrows to float32
                CHECK(ds.videos[i].flows[f].uv[k] ==
                      doctest::Approx(videos[i].flows[f].uv[k]).epsilon(1e-6));
        CHECK(ds.videos[i].boxes.size() == videos[i].boxes.size());
        gt_total += videos[i].segments.size();
    }
    CHECK(ds.ground_truth.size() == gt_total);
}

TEST_CASE("run config parsing") {
    const fs::path dir = tmp_dir("config");
    const fs::path p = dir / "run.json";

    SUBCASE("minimal document uses the desk profile") {
        std::ofstream(p, std::ios::trunc) << R"({"profile": "desk"})";
        RunConfig c = read_run_config(p);
        CHECK(c.model.T == 64);
        CHECK(c.model.Z == 32);
        CHECK(c.synth.frames == c.model.T);
        CHECK(c.synth.classes == c.model.C);
    }

    SUBCASE("profile is mandatory") {
        std::ofstream(p, std::ios::trunc) << R"({"seed": 3})";
        CHECK_THROWS_WITH_AS(read_run_config(p), doctest::Contains("profile"), std::runtime_error);
    }

    SUBCASE("unknown keys are rejected with their scope") {
        std::ofstream(p, std::ios::trunc) << R"({"profile": "desk", "mdc": {"componets": 2}})";
        CHECK_THROWS_WITH_AS(read_run_config(p), doctest::Contains("mdc.componets"), std::runtime_error);
    }

    SUBCASE("MMDET_SEED overrides the configured seed") {
        std::ofstream(p, std::ios::trunc) << R"({"profile": "desk", "seed": 3})";
        setenv("MMDET_SEED", "42", 1);
        RunConfig c = read_run_config(p);
        unsetenv("MMDET_SEED");
        CHECK(c.seed == 42);
        CHECK(c.synth.seed == 42);
        CHECK(c.model.seed == 42);
        CHECK(read_run_config(p).seed == 3);
    }

    SUBCASE("config echo is itself a readable config") {
        std::ofstream(p, std::ios::trunc) << R"({"profile": "desk", "seed": 5, "regression": {"segment_q": 8}})";
        RunConfig c = read_run_config(p);
        std::ofstream(p, std::ios::trunc) << run_config_json(c);
        RunConfig back = read_run_config(p);
        CHECK(back.seed == c.seed);
        CHECK(back.regression.segment_len == 8);
    }
}

TEST_CASE("labels_to_onehot") {
    Tensor t = labels_to_onehot({0, 2, 1}, 3);
    REQUIRE(t.shape == std::vector<int>{3, 3});
    CHECK(t.at(0, 0) == 1.0);
    CHECK(t.at(1, 2) == 1.0);
    CHECK(t.at(2, 1) == 1.0);
    double sum = 0;
    for (double v : t.data) sum += v;
    CHECK(sum == 3.0);
    CHECK_THROWS_AS(labels_to_onehot({3}, 3), std::invalid_argument);
}

TEST_CASE("compute_features emits model-shaped tensors and reacts to motion correction") {
    RunConfig c = tiny_run_config();
    c.synth.pan_min = 2.0;
    c.synth.pan_max = 4.0;
    c.synth.noise = 0.05;
    auto videos = generate_dataset(c.synth);
    VideoFeatures with_mdc = compute_features(videos[0], c);
    CHECK(with_mdc.xs.shape == std::vector<int>{c.model.T, c.model.Z});
    CHECK(with_mdc.xm.shape == std::vector<int>{c.model.T, c.model.Z});

    RunConfig raw = c;
    raw.mdc.enabled = false;
    VideoFeatures without = compute_features(videos[0], raw);
    CHECK(with_mdc.xs.data == without.xs.data);  // spatial stream unaffected
    CHECK(with_mdc.xm.data != without.xm.data);  // pan removal changes motion features
}

TEST_CASE("pipeline runs are deterministic and dump inspectable artifacts") {
    RunConfig c = tiny_run_config();
    const fs::path dump = tmp_dir("pipeline_dump");
    PipelineResult a = run_pipeline(c, {0.3, 0.5}, dump);
    PipelineResult b = run_pipeline(c, {0.3, 0.5});
    CHECK(a.report_json == b.report_json);
    CHECK(a.predictions.size() == b.predictions.size());
    for (const auto& p : a.predictions) CHECK(p.cls != 0);

    CHECK(fs::exists(dump / "eval.json"));
    CHECK(fs::exists(dump / "segments.json"));
    CHECK(fs::exists(dump / "model.ckpt.json"));
    CHECK(fs::exists(dump / "config.echo.json"));
    CHECK(fs::exists(dump / "dataset" / "gt.json"));

    std::ifstream in(dump / "eval.json");
    std::string dumped((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(dumped == a.report_json + "\n");
}

TEST_CASE("ablation report has one row per selection and is reproducible") {
    RunConfig c = tiny_run_config();
    c.model.epochs = 3;
    AttentionSelection ss_only;
    ss_only.mm = ss_only.sm = ss_only.ms = false;
    AttentionSelection all;
    AblationReport r1 = run_ablation(c, {ss_only, all}, {0.5});
    AblationReport r2 = run_ablation(c, {ss_only, all}, {0.5});
    REQUIRE(r1.rows.size() == 2);
    CHECK(r1.rows[0].selection.label() == "S-S");
    CHECK(r1.rows[1].selection.label() == "S-S+M-M+S-M+M-S");
    CHECK(ablation_table(r1) == ablation_table(r2));
    const std::string table = ablation_table(r1);
    CHECK(table.find("Attention type") != std::string::npos);
    CHECK(table.find("S-S") != std::string::npos);
}
