#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmdet/flow.hpp"

namespace mmdet {

// Symmetric 2x2 covariance, stored as (xx, xy, yy).
struct Cov2 {
    double xx = 1.0, xy = 0.0, yy = 1.0;
};

struct GmmModel {
    std::vector<std::array<double, 2>> means;
    std::vector<Cov2> covariances;
    std::vector<double> weights;

    int components() const { return static_cast<int>(means.size()); }
};

struct EmTrace {
    std::vector<double> log_likelihood;  // one entry per E-step
    int iterations = 0;
    std::string convergence_reason;
};

struct ConvergenceThresholds {
    double theta_mu = 1e-4;
    double theta_sigma = 1e-4;
    double theta_pi = 1e-5;
    double theta_ll = 1e-6;
    int max_iterations = 200;
};

// Eigenvalue floor applied to every covariance after each M-step.
inline constexpr double kCovarianceFloor = 1e-6;

struct GmmFit {
    GmmModel model;
    EmTrace trace;
};

// EM over 2-D motion vectors; k-means++ seeding with the given seed,
// uniform initial weights, per-cluster empirical covariances.
GmmFit fit_gmm(const MotionVectorSet& background, int components, const ConvergenceThresholds& thresholds,
               std::uint64_t seed);

// argmax_m pi_m N(s | mu_m, Sigma_m); ties break to the lowest index
int assign_cluster(const GmmModel& model, double u, double v);

// log pi_m N(s | mu_m, Sigma_m) for all m
std::vector<double> component_log_scores(const GmmModel& model, double u, double v);

// Subtract the assigned (or posterior-averaged, when soft) cluster mean from
// every vector, foreground included.
FlowField restore_motion(const GmmModel& model, const FlowField& field, bool soft_assign = false);

struct FrameDiagnostics {
    int frame = 0;
    int iterations = 0;
    double final_log_likelihood = 0.0;
    std::string convergence_reason;
    bool empty_background_fallback = false;
    std::vector<std::array<double, 2>> means;
};

struct CorrectedSequence {
    std::vector<FlowField> fields;
    std::vector<FrameDiagnostics> diagnostics;
};

// Per frame: segment by boxes, fit on background (all vectors when the boxes
// cover the frame), restore the whole field.
CorrectedSequence correct_sequence(const std::vector<FlowField>& fields, const PersonBoxes& boxes, int components,
                                   const ConvergenceThresholds& thresholds, std::uint64_t seed,
                                   bool soft_assign = false);

}  // namespace mmdet
