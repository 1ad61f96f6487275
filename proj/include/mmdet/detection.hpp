#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmdet/tensor.hpp"

namespace mmdet {

struct ActionSegment {
    std::string video;
    int cls = 0;
    int start = 0;  // inclusive
    int end = 0;    // inclusive
    double score = 0.0;

    bool operator==(const ActionSegment&) const = default;
};

// Binarize scores: 1 iff score >= theta.
std::vector<std::vector<int>> threshold_scores(const Tensor& scores, double theta);

// Threshold, split into chunks of `segment_len` frames (ragged tail allowed),
// per-chunk majority vote, merge equal-label runs, then extract the first/last
// positive frame inside each merged block. Segment score is the mean
// pre-threshold score over [start, end].
std::vector<ActionSegment> regress_segments(const Tensor& scores, double theta, int segment_len,
                                            const std::string& video = "");

// Inclusive frame-interval intersection over union.
double tiou(const ActionSegment& a, const ActionSegment& b);

struct ThresholdReport {
    double threshold = 0.0;
    std::map<int, double> ap_per_class;  // classes with ground truth only
    std::vector<int> skipped_classes;    // predicted classes without ground truth
    double map = 0.0;
};

struct EvalReport {
    std::vector<ThresholdReport> per_threshold;
    double average_map = 0.0;
};

EvalReport evaluate_map(const std::vector<ActionSegment>& predictions, const std::vector<ActionSegment>& ground_truth,
                        const std::vector<double>& tiou_thresholds);

std::string eval_report_json(const EvalReport& report);
std::string eval_report_table(const EvalReport& report);

std::vector<ActionSegment> read_segments_json(const std::filesystem::path& path, bool require_score);
void write_segments_json(const std::vector<ActionSegment>& segments, const std::filesystem::path& path,
                         bool with_score);

}  // namespace mmdet
