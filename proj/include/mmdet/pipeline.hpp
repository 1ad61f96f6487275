#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmdet/detection.hpp"
#include "mmdet/gmm.hpp"
#include "mmdet/synth.hpp"
#include "mmdet/transformer.hpp"

namespace mmdet {

struct MdcConfig {
    bool enabled = true;
    int components = 2;
    ConvergenceThresholds thresholds;
    bool soft_assign = false;
};

struct RegressionConfig {
    double theta = 0.5;
    int segment_len = 16;
};

struct RunConfig {
    std::string profile = "desk";
    std::uint64_t seed = 7;
    ModelConfig model;
    MdcConfig mdc;
    RegressionConfig regression;
    SynthSpec synth;
    std::uint64_t embed_seed = 99;
    double target_accuracy = 0.95;
    int threads = 0;  // 0: hardware concurrency

    void validate() const;
};

// JSON config document; unknown keys rejected, profile mandatory. The
// MMDET_SEED environment variable overrides the seed.
RunConfig read_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& config);

// Features for one video: motion correction (when enabled) followed by the
// toy embedder on both modalities.
struct VideoFeatures {
    std::string name;
    Tensor xs;
    Tensor xm;
    std::vector<int> labels;
};

VideoFeatures compute_features(const LoadedVideo& video, const RunConfig& config);
VideoFeatures compute_features(const VideoSample& video, const RunConfig& config);

Tensor labels_to_onehot(const std::vector<int>& labels, int classes);

struct PipelineResult {
    EvalReport report;
    std::string report_json;
    TrainResult training;
    std::vector<ActionSegment> predictions;
};

// synth -> motion correction -> embed -> train -> detect -> evaluate
PipelineResult run_pipeline(const RunConfig& config, const std::vector<double>& tiou_thresholds,
                            const std::filesystem::path& dump_dir = {});

struct AblationRow {
    AttentionSelection selection;
    std::vector<double> map_per_threshold;
    double average_map = 0.0;
};

struct AblationReport {
    std::vector<double> tiou_thresholds;
    std::vector<AblationRow> rows;
};

// Trains and evaluates each selection on the same synthetic split.
AblationReport run_ablation(const RunConfig& config, const std::vector<AttentionSelection>& selections,
                            const std::vector<double>& tiou_thresholds);

std::string ablation_table(const AblationReport& report);

int hardware_threads();

}  // namespace mmdet
