#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mmdet/detection.hpp"
#include "mmdet/gmm.hpp"
#include "mmdet/pipeline.hpp"
#include "mmdet/synth.hpp"
#include "mmdet/transformer.hpp"

namespace fs = std::filesystem;
using namespace mmdet;

namespace {

std::vector<double> parse_thresholds(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t next = csv.find(',', pos);
        if (next == std::string::npos) next = csv.size();
        out.push_back(std::stod(csv.substr(pos, next - pos)));
        pos = next + 1;
    }
    if (out.empty()) throw std::runtime_error("empty tIoU threshold list");
    return out;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    SynthSpec spec = read_synth_spec(spec_path);
    if (const char* env = std::getenv("MMDET_SEED")) spec.seed = std::strtoull(env, nullptr, 10);
    std::vector<VideoSample> videos = generate_dataset(spec);
    write_dataset(videos, spec, out_dir);
    std::cout << "wrote " << videos.size() << " videos to " << out_dir << "\n";
    return 0;
}

int cmd_mdc(const std::string& flow_dir, const std::string& boxes_path, const std::string& out_dir, int components,
            bool soft) {
    std::vector<fs::path> flo_files;
    for (const auto& e : fs::directory_iterator(flow_dir))
        if (e.path().extension() == ".flo") flo_files.push_back(e.path());
    std::sort(flo_files.begin(), flo_files.end());
    if (flo_files.empty()) throw std::runtime_error(flow_dir + ": no .flo files");
    std::vector<FlowField> fields;
    for (const auto& p : flo_files) fields.push_back(read_flo(p));
    PersonBoxes boxes = read_boxes_json(boxes_path);

    ConvergenceThresholds thresholds;
    std::uint64_t seed = 1;
    if (const char* env = std::getenv("MMDET_SEED")) seed = std::strtoull(env, nullptr, 10);
    CorrectedSequence corrected = correct_sequence(fields, boxes, components, thresholds, seed, soft);

    fs::create_directories(out_dir);
    nlohmann::ordered_json diag = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < corrected.fields.size(); ++i) {
        write_flo(corrected.fields[i], fs::path(out_dir) / flo_files[i].filename());
        const FrameDiagnostics& d = corrected.diagnostics[i];
        nlohmann::ordered_json dj;
        dj["frame"] = d.frame;
        dj["iterations"] = d.iterations;
        dj["final_log_likelihood"] = d.final_log_likelihood;
        dj["convergence_reason"] = d.convergence_reason;
        dj["empty_background_fallback"] = d.empty_background_fallback;
        nlohmann::ordered_json means = nlohmann::ordered_json::array();
        for (const auto& m : d.means) means.push_back({m[0], m[1]});
        dj["cluster_means"] = std::move(means);
        diag.push_back(std::move(dj));
    }
    std::ofstream out(fs::path(out_dir) / "diagnostics.json", std::ios::trunc);
    out << diag.dump(2) << '\n';
    std::cout << "corrected " << corrected.fields.size() << " flow fields -> " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_ckpt,
              std::uint64_t seed_override, int epochs_override, double lr_override) {
    RunConfig config = read_run_config(config_path);
    if (seed_override) {
        config.seed = seed_override;
        config.model.seed = seed_override;
    }
    if (epochs_override > 0) config.model.epochs = epochs_override;
    if (lr_override > 0) config.model.lr = lr_override;
    std::cout << "effective config:\n" << run_config_json(config) << "\n";

    LoadedDataset ds = read_dataset(data_dir);
    std::vector<TrainSample> batch;
    for (const LoadedVideo& v : ds.videos) {
        VideoFeatures f = compute_features(v, config);
        TrainSample s;
        s.xs = std::move(f.xs);
        s.xm = std::move(f.xm);
        s.target = labels_to_onehot(f.labels, config.model.C);
        batch.push_back(std::move(s));
    }
    ModelParams params = init_params(config.model, AttentionSelection{}, config.seed);
    const int threads = config.threads > 0 ? config.threads : hardware_threads();
    TrainResult result = train(batch, params, config.target_accuracy, threads, [](int epoch, const TrainStats& st) {
        if (epoch % 10 == 0)
            std::printf("epoch %4d  loss %10.4f  frame-acc %6.4f\n", epoch, st.loss, st.frame_accuracy);
    });
    save_checkpoint(params, out_ckpt);
    std::printf("trained %d epochs, final frame accuracy %.4f, checkpoint -> %s\n", result.epochs_run,
                result.epoch_accuracy.back(), out_ckpt.c_str());
    return 0;
}

int cmd_detect(const std::string& ckpt_path, const std::string& data_dir, const std::string& out_path, double theta,
               int segment_q, const std::string& config_path) {
    ModelParams params = load_checkpoint(ckpt_path);
    RunConfig config;
    if (!config_path.empty())
        config = read_run_config(config_path);
    else
        config.model = params.config;
    config.model = params.config;

    LoadedDataset ds = read_dataset(data_dir);
    std::vector<ActionSegment> predictions;
    for (const LoadedVideo& v : ds.videos) {
        VideoFeatures f = compute_features(v, config);
        Tensor yhat = forward(params, f.xs, f.xm);
        for (ActionSegment& s : regress_segments(yhat, theta, segment_q, v.name))
            if (s.cls != 0) predictions.push_back(s);
    }
    write_segments_json(predictions, out_path, /*with_score=*/true);
    std::cout << "wrote " << predictions.size() << " segments to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& tiou_csv,
             const std::string& out_path) {
    std::vector<ActionSegment> pred = read_segments_json(pred_path, /*require_score=*/true);
    std::vector<ActionSegment> gt = read_segments_json(gt_path, /*require_score=*/false);
    EvalReport report = evaluate_map(pred, gt, parse_thresholds(tiou_csv));
    const std::string json = eval_report_json(report);
    std::cout << json << "\n" << eval_report_table(report);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        out << json << '\n';
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& tiou_csv) {
    RunConfig config = read_run_config(config_path);
    std::cout << "effective config:\n" << run_config_json(config) << "\n";
    const std::vector<AttentionSelection> selections = {
        {true, false, false, false}, {false, true, false, false}, {false, false, true, false},
        {false, false, false, true}, {true, true, false, false},  {true, true, true, true},
    };
    AblationReport report = run_ablation(config, selections, parse_thresholds(tiou_csv));
    std::cout << ablation_table(report);
    return 0;
}

int cmd_pipeline(const std::string& config_path, const std::string& out_dir, const std::string& tiou_csv) {
    RunConfig config = read_run_config(config_path);
    std::cout << "effective config:\n" << run_config_json(config) << "\n";
    PipelineResult result = run_pipeline(config, parse_thresholds(tiou_csv), out_dir);
    std::cout << result.report_json << "\n" << eval_report_table(result.report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-modal action detection pipeline"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, flow_dir, boxes_path, config_path, data_dir, ckpt_path, pred_path, gt_path;
    std::string tiou_csv = "0.3,0.4,0.5,0.6,0.7";
    std::string out_path;
    int components = 16, segment_q = 16, epochs_override = 0;
    double theta = 0.5, lr_override = 0.0;
    std::uint64_t seed_override = 0;
    bool soft = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec_path, "synthesis spec JSON")->required();
    synth->add_option("--out", out_dir, "output directory")->required();

    auto* mdc = app.add_subcommand("mdc", "motion distortion correction over a directory of .flo files");
    mdc->add_option("--flows", flow_dir, "directory of .flo files")->required();
    mdc->add_option("--boxes", boxes_path, "person boxes JSON")->required();
    mdc->add_option("--out", out_dir, "output directory")->required();
    mdc->add_option("--M", components, "GMM component count");
    mdc->add_flag("--soft-assign", soft, "posterior-weighted mean subtraction instead of hard argmax");

    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset directory");
    train_cmd->add_option("--config", config_path, "run config JSON")->required();
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", out_path, "output checkpoint path")->required();
    train_cmd->add_option("--seed", seed_override, "override config seed");
    train_cmd->add_option("--epochs", epochs_override, "override config epochs");
    train_cmd->add_option("--lr", lr_override, "override learning rate");

    auto* detect = app.add_subcommand("detect", "emit action segments from a checkpoint");
    detect->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    detect->add_option("--data", data_dir, "dataset directory")->required();
    detect->add_option("--out", out_path, "output segments JSON")->required();
    detect->add_option("--theta", theta, "detection threshold");
    detect->add_option("--segment-q", segment_q, "frames per split segment");
    detect->add_option("--config", config_path, "run config for correction/embedding settings");

    auto* eval = app.add_subcommand("eval", "mAP@tIoU evaluation");
    eval->add_option("--pred", pred_path, "predicted segments JSON")->required();
    eval->add_option("--gt", gt_path, "ground-truth segments JSON")->required();
    eval->add_option("--tiou", tiou_csv, "comma-separated tIoU thresholds");
    eval->add_option("--out", out_path, "also write the report JSON here");

    auto* ablate = app.add_subcommand("ablate", "attention-type ablation on a synthetic split");
    ablate->add_option("--config", config_path, "run config JSON")->required();
    ablate->add_option("--tiou", tiou_csv, "comma-separated tIoU thresholds");

    auto* pipeline = app.add_subcommand("pipeline", "end-to-end synth/correct/train/detect/eval run");
    pipeline->add_option("--config", config_path, "run config JSON")->required();
    pipeline->add_option("--out", out_dir, "dump directory for intermediates")->required();
    pipeline->add_option("--tiou", tiou_csv, "comma-separated tIoU thresholds");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir);
        if (mdc->parsed()) return cmd_mdc(flow_dir, boxes_path, out_dir, components, soft);
        if (train_cmd->parsed())
            return cmd_train(config_path, data_dir, out_path, seed_override, epochs_override, lr_override);
        if (detect->parsed()) return cmd_detect(ckpt_path, data_dir, out_path, theta, segment_q, config_path);
        if (eval->parsed()) return cmd_eval(pred_path, gt_path, tiou_csv, out_path);
        if (ablate->parsed()) return cmd_ablate(config_path, tiou_csv);
        if (pipeline->parsed()) return cmd_pipeline(config_path, out_dir, tiou_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
