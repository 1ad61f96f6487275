#include "mmdet/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace mmdet {

int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

void RunConfig::validate() const {
    if (profile != "desk" && profile != "paper")
        throw std::invalid_argument("config: profile must be 'desk' or 'paper', got '" + profile + "'");
    model.validate();
    synth.validate();
    if (mdc.components < 1) throw std::invalid_argument("config: mdc.components must be positive");
    if (!(regression.theta > 0.0 && regression.theta < 1.0))
        throw std::invalid_argument("config: regression.theta must lie in (0,1)");
    if (regression.segment_len < 1) throw std::invalid_argument("config: regression.segment_len must be positive");
    if (synth.classes != model.C)
        throw std::invalid_argument("config: synth.classes must match model.C");
    if (synth.frames != model.T) throw std::invalid_argument("config: synth.frames must match model.T");
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& scope) {
    for (const auto& [key, val] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::runtime_error("config: unknown key '" + scope + key + "'");
}

template <typename T>
void opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig read_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
    }
    reject_unknown(j, {"profile", "seed", "model", "mdc", "regression", "synth", "embed_seed", "target_accuracy",
                       "threads"},
                   "");
    RunConfig c;
    if (!j.contains("profile")) throw std::runtime_error("config: mandatory key 'profile' missing");
    c.profile = j.at("profile").get<std::string>();
    if (c.profile == "paper")
        c.model = paper_profile();
    else
        c.model = desk_profile();
    opt(j, "seed", c.seed);
    opt(j, "embed_seed", c.embed_seed);
    opt(j, "target_accuracy", c.target_accuracy);
    opt(j, "threads", c.threads);
    if (j.contains("model")) {
        const auto& m = j["model"];
        reject_unknown(m, {"T", "Z", "L", "H", "Zq", "Zk", "Zv", "Zm", "C", "kernel", "alpha", "lr", "weight_decay",
                           "epochs"},
                       "model.");
        opt(m, "T", c.model.T);
        opt(m, "Z", c.model.Z);
        opt(m, "L", c.model.L);
        opt(m, "H", c.model.H);
        opt(m, "Zq", c.model.Zq);
        opt(m, "Zk", c.model.Zk);
        opt(m, "Zv", c.model.Zv);
        opt(m, "Zm", c.model.Zm);
        opt(m, "C", c.model.C);
        opt(m, "kernel", c.model.kernel);
        opt(m, "alpha", c.model.alpha);
        opt(m, "lr", c.model.lr);
        opt(m, "weight_decay", c.model.weight_decay);
        opt(m, "epochs", c.model.epochs);
    }
    if (j.contains("mdc")) {
        const auto& m = j["mdc"];
        reject_unknown(m, {"enabled", "M", "theta_mu", "theta_sigma", "theta_pi", "theta_ll", "max_iterations",
                           "soft_assign"},
                       "mdc.");
        opt(m, "enabled", c.mdc.enabled);
        opt(m, "M", c.mdc.components);
        opt(m, "theta_mu", c.mdc.thresholds.theta_mu);
        opt(m, "theta_sigma", c.mdc.thresholds.theta_sigma);
        opt(m, "theta_pi", c.mdc.thresholds.theta_pi);
        opt(m, "theta_ll", c.mdc.thresholds.theta_ll);
        opt(m, "max_iterations", c.mdc.thresholds.max_iterations);
        opt(m, "soft_assign", c.mdc.soft_assign);
    }
    if (j.contains("regression")) {
        const auto& r = j["regression"];
        reject_unknown(r, {"theta", "segment_q"}, "regression.");
        opt(r, "theta", c.regression.theta);
        opt(r, "segment_q", c.regression.segment_len);
    }
    if (j.contains("synth")) {
        const auto& s = j["synth"];
        reject_unknown(s, {"num_videos", "frames", "height", "width", "classes", "pan_min", "pan_max", "noise"},
                       "synth.");
        opt(s, "num_videos", c.synth.num_videos);
        opt(s, "frames", c.synth.frames);
        opt(s, "height", c.synth.height);
        opt(s, "width", c.synth.width);
        opt(s, "classes", c.synth.classes);
        opt(s, "pan_min", c.synth.pan_min);
        opt(s, "pan_max", c.synth.pan_max);
        opt(s, "noise", c.synth.noise);
    }
    if (const char* env = std::getenv("MMDET_SEED")) c.seed = std::strtoull(env, nullptr, 10);
    if (c.profile == "desk") {
        c.synth.frames = c.model.T;
        c.synth.classes = c.model.C;
    }
    c.synth.seed = c.seed;
    c.model.seed = c.seed;
    c.validate();
    return c;
}

std::string run_config_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["profile"] = c.profile;
    j["seed"] = c.seed;
    j["model"] = {{"T", c.model.T},
                  {"Z", c.model.Z},
                  {"L", c.model.L},
                  {"H", c.model.H},
                  {"Zq", c.model.Zq},
                  {"Zk", c.model.Zk},
                  {"Zv", c.model.Zv},
                  {"Zm", c.model.Zm},
                  {"C", c.model.C},
                  {"kernel", c.model.kernel},
                  {"alpha", c.model.alpha},
                  {"lr", c.model.lr},
                  {"weight_decay", c.model.weight_decay},
                  {"epochs", c.model.epochs}};
    j["mdc"] = {{"enabled", c.mdc.enabled},
                {"M", c.mdc.components},
                {"theta_mu", c.mdc.thresholds.theta_mu},
                {"theta_sigma", c.mdc.thresholds.theta_sigma},
                {"theta_pi", c.mdc.thresholds.theta_pi},
                {"theta_ll", c.mdc.thresholds.theta_ll},
                {"max_iterations", c.mdc.thresholds.max_iterations},
                {"soft_assign", c.mdc.soft_assign}};
    j["regression"] = {{"theta", c.regression.theta}, {"segment_q", c.regression.segment_len}};
    j["synth"] = {{"num_videos", c.synth.num_videos}, {"frames", c.synth.frames},   {"height", c.synth.height},
                  {"width", c.synth.width},           {"classes", c.synth.classes}, {"pan_min", c.synth.pan_min},
                  {"pan_max", c.synth.pan_max},       {"noise", c.synth.noise}};
    j["embed_seed"] = c.embed_seed;
    j["target_accuracy"] = c.target_accuracy;
    return j.dump(2);
}

namespace {

VideoFeatures features_from(const std::string& name, const VideoFrames& frames, const std::vector<FlowField>& flows,
                            const PersonBoxes& boxes, const std::vector<int>& labels, const RunConfig& config) {
    VideoFeatures out;
    out.name = name;
    out.labels = labels;
    out.xs = embed_toy(frames, config.model.Z, config.embed_seed);
    if (config.mdc.enabled) {
        CorrectedSequence corrected =
            correct_sequence(flows, boxes, config.mdc.components, config.mdc.thresholds, config.seed,
                             config.mdc.soft_assign);
        out.xm = embed_toy(corrected.fields, config.model.Z, config.embed_seed + 1);
    } else {
        out.xm = embed_toy(flows, config.model.Z, config.embed_seed + 1);
    }
    return out;
}

}  // namespace

VideoFeatures compute_features(const LoadedVideo& v, const RunConfig& config) {
    return features_from(v.name, v.frames, v.flows, v.boxes, v.labels, config);
}

VideoFeatures compute_features(const VideoSample& v, const RunConfig& config) {
    return features_from(v.name, v.frames, v.flows, v.boxes, v.labels, config);
}

Tensor labels_to_onehot(const std::vector<int>& labels, int classes) {
    Tensor t({static_cast<int>(labels.size()), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range");
        t.at(static_cast<int>(i), labels[i]) = 1.0;
    }
    return t;
}

PipelineResult run_pipeline(const RunConfig& config, const std::vector<double>& tiou_thresholds,
                            const std::filesystem::path& dump_dir) {
    config.validate();
    namespace fs = std::filesystem;
    const int threads = config.threads > 0 ? config.threads : hardware_threads();

    std::vector<VideoSample> videos = generate_dataset(config.synth);
    if (!dump_dir.empty()) write_dataset(videos, config.synth, dump_dir / "dataset");

    std::vector<VideoFeatures> feats;
    std::vector<TrainSample> batch;
    std::vector<ActionSegment> gt;
    for (const VideoSample& v : videos) {
        VideoFeatures f = compute_features(v, config);
        TrainSample s;
        s.xs = f.xs;
        s.xm = f.xm;
        s.target = labels_to_onehot(f.labels, config.model.C);
        batch.push_back(std::move(s));
        feats.push_back(std::move(f));
        gt.insert(gt.end(), v.segments.begin(), v.segments.end());
    }

    ModelParams params = init_params(config.model, AttentionSelection{}, config.seed);
    PipelineResult result;
    result.training = train(batch, params, config.target_accuracy, threads);
    if (!dump_dir.empty()) save_checkpoint(params, dump_dir / "model.ckpt.json");

    for (const VideoFeatures& f : feats) {
        Tensor yhat = forward(params, f.xs, f.xm);
        std::vector<ActionSegment> segs =
            regress_segments(yhat, config.regression.theta, config.regression.segment_len, f.name);
        for (ActionSegment& s : segs)
            if (s.cls != 0) result.predictions.push_back(s);  // class 0 is idle
    }
    if (!dump_dir.empty()) write_segments_json(result.predictions, dump_dir / "segments.json", /*with_score=*/true);

    result.report = evaluate_map(result.predictions, gt, tiou_thresholds);
    result.report_json = eval_report_json(result.report);
    if (!dump_dir.empty()) {
        std::ofstream out(dump_dir / "eval.json", std::ios::trunc);
        out << result.report_json << '\n';
        std::ofstream cfg(dump_dir / "config.echo.json", std::ios::trunc);
        cfg << run_config_json(config) << '\n';
    }
    return result;
}

AblationReport run_ablation(const RunConfig& config, const std::vector<AttentionSelection>& selections,
                            const std::vector<double>& tiou_thresholds) {
    config.validate();
    const int threads = config.threads > 0 ? config.threads : hardware_threads();

    std::vector<VideoSample> videos = generate_dataset(config.synth);
    std::vector<TrainSample> batch;
    std::vector<VideoFeatures> feats;
    std::vector<ActionSegment> gt;
    for (const VideoSample& v : videos) {
        VideoFeatures f = compute_features(v, config);
        TrainSample s;
        s.xs = f.xs;
        s.xm = f.xm;
        s.target = labels_to_onehot(f.labels, config.model.C);
        batch.push_back(std::move(s));
        feats.push_back(std::move(f));
        gt.insert(gt.end(), v.segments.begin(), v.segments.end());
    }

    AblationReport report;
    report.tiou_thresholds = tiou_thresholds;
    for (const AttentionSelection& sel : selections) {
        ModelParams params = init_params(config.model, sel, config.seed);
        train(batch, params, config.target_accuracy, threads);
        std::vector<ActionSegment> preds;
        for (const VideoFeatures& f : feats) {
            Tensor yhat = forward(params, f.xs, f.xm);
            for (ActionSegment& s :
                 regress_segments(yhat, config.regression.theta, config.regression.segment_len, f.name))
                if (s.cls != 0) preds.push_back(s);
        }
        EvalReport er = evaluate_map(preds, gt, tiou_thresholds);
        AblationRow row;
        row.selection = sel;
        for (const auto& tr : er.per_threshold) row.map_per_threshold.push_back(tr.map);
        row.average_map = er.average_map;
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string ablation_table(const AblationReport& report) {
    std::ostringstream os;
    os << "Attention type";
    for (double t : report.tiou_thresholds) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "  mAP@%.1f", t);
        os << buf;
    }
    os << "      Avg\n";
    for (const AblationRow& row : report.rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-14s", row.selection.label().c_str());
        os << buf;
        for (double m : row.map_per_threshold) {
            std::snprintf(buf, sizeof(buf), "  %7.4f", m);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), "  %7.4f\n", row.average_map);
        os << buf;
    }
    return os.str();
}

}  // namespace mmdet
