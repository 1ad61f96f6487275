#include "mmdet/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace mmdet {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_det(const Cov2& c) { return std::log(c.xx * c.yy - c.xy * c.xy); }

// log N(s | mu, Sigma) for a 2-D Gaussian
double log_gauss(double u, double v, const std::array<double, 2>& mu, const Cov2& c) {
    const double det = c.xx * c.yy - c.xy * c.xy;
    const double du = u - mu[0], dv = v - mu[1];
    const double quad = (c.yy * du * du - 2.0 * c.xy * du * dv + c.xx * dv * dv) / det;
    return -kLog2Pi - 0.5 * std::log(det) - 0.5 * quad;
}

// Clamp both eigenvalues of a symmetric 2x2 matrix from below.
Cov2 floor_cov(const Cov2& c, double floor) {
    const double tr = c.xx + c.yy;
    const double diff = c.xx - c.yy;
    const double disc = std::sqrt(diff * diff + 4.0 * c.xy * c.xy);
    double l1 = 0.5 * (tr + disc), l2 = 0.5 * (tr - disc);
    if (l1 >= floor && l2 >= floor) return c;
    // eigenvector for l1
    double ex, ey;
    if (std::abs(c.xy) > 1e-300) {
        ex = l1 - c.yy;
        ey = c.xy;
    } else if (c.xx >= c.yy) {
        ex = 1.0;
        ey = 0.0;
    } else {
        ex = 0.0;
        ey = 1.0;
    }
    const double norm = std::sqrt(ex * ex + ey * ey);
    ex /= norm;
    ey /= norm;
    l1 = std::max(l1, floor);
    l2 = std::max(l2, floor);
    // reconstruct l1*e*e^T + l2*(e_perp)*(e_perp)^T
    Cov2 out;
    out.xx = l1 * ex * ex + l2 * ey * ey;
    out.xy = (l1 - l2) * ex * ey;
    out.yy = l1 * ey * ey + l2 * ex * ex;
    return out;
}

double log_sum_exp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

struct Seeding {
    std::vector<std::array<double, 2>> means;
    std::vector<Cov2> covs;
};

Seeding kmeanspp_seed(const MotionVectorSet& pts, int m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = pts.size();
    std::vector<std::array<double, 2>> centers;
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    const MotionVector& p0 = pts[first(rng)];
    centers.push_back({p0.u, p0.v});
    std::vector<double> d2(n, 0.0);
    while (static_cast<int>(centers.size()) < m) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) {
                const double du = pts[i].u - c[0], dv = pts[i].v - c[1];
                best = std::min(best, du * du + dv * dv);
            }
            d2[i] = best;
            total += best;
        }
        std::size_t pick;
        if (total <= 0.0) {
            // all points coincide with existing centers
            pick = first(rng);
        } else {
            std::uniform_real_distribution<double> ud(0.0, total);
            double r = ud(rng);
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                r -= d2[i];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centers.push_back({pts[pick].u, pts[pick].v});
    }

    // one assignment pass for empirical means/covariances
    std::vector<std::array<double, 2>> sums(m, {0.0, 0.0});
    std::vector<int> counts(m, 0);
    std::vector<int> assign(n);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < m; ++c) {
            const double du = pts[i].u - centers[c][0], dv = pts[i].v - centers[c][1];
            const double d = du * du + dv * dv;
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        assign[i] = best;
        sums[best][0] += pts[i].u;
        sums[best][1] += pts[i].v;
        ++counts[best];
    }
    Seeding s;
    s.means.resize(m);
    s.covs.assign(m, Cov2{});
    for (int c = 0; c < m; ++c)
        s.means[c] = counts[c] > 0 ? std::array<double, 2>{sums[c][0] / counts[c], sums[c][1] / counts[c]}
                                   : centers[c];
    std::vector<Cov2> acc(m, Cov2{0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
        const int c = assign[i];
        const double du = pts[i].u - s.means[c][0], dv = pts[i].v - s.means[c][1];
        acc[c].xx += du * du;
        acc[c].xy += du * dv;
        acc[c].yy += dv * dv;
    }
    for (int c = 0; c < m; ++c) {
        Cov2 cv{1.0, 0.0, 1.0};
        if (counts[c] > 0) {
            cv.xx = acc[c].xx / counts[c];
            cv.xy = acc[c].xy / counts[c];
            cv.yy = acc[c].yy / counts[c];
        }
        s.covs[c] = floor_cov(cv, kCovarianceFloor);
    }
    return s;
}

double max_abs_delta_means(const GmmModel& a, const GmmModel& b) {
    double d = 0.0;
    for (int m = 0; m < a.components(); ++m) {
        d = std::max(d, std::abs(a.means[m][0] - b.means[m][0]));
        d = std::max(d, std::abs(a.means[m][1] - b.means[m][1]));
    }
    return d;
}

double max_abs_delta_covs(const GmmModel& a, const GmmModel& b) {
    double d = 0.0;
    for (int m = 0; m < a.components(); ++m) {
        d = std::max(d, std::abs(a.covariances[m].xx - b.covariances[m].xx));
        d = std::max(d, std::abs(a.covariances[m].xy - b.covariances[m].xy));
        d = std::max(d, std::abs(a.covariances[m].yy - b.covariances[m].yy));
    }
    return d;
}

double max_abs_delta_weights(const GmmModel& a, const GmmModel& b) {
    double d = 0.0;
    for (int m = 0; m < a.components(); ++m) d = std::max(d, std::abs(a.weights[m] - b.weights[m]));
    return d;
}

}  // namespace

std::vector<double> component_log_scores(const GmmModel& model, double u, double v) {
    std::vector<double> s(model.components());
    for (int m = 0; m < model.components(); ++m)
        s[m] = std::log(std::max(model.weights[m], 1e-300)) + log_gauss(u, v, model.means[m], model.covariances[m]);
    return s;
}

GmmFit fit_gmm(const MotionVectorSet& background, int components, const ConvergenceThresholds& thresholds,
               std::uint64_t seed) {
    if (components < 1) throw std::invalid_argument("fit_gmm: component count must be positive");
    const std::size_t n = background.size();
    if (n < static_cast<std::size_t>(components))
        throw std::invalid_argument("fit_gmm: need at least " + std::to_string(components) + " vectors, got " +
                                    std::to_string(n));

    Seeding seeding = kmeanspp_seed(background, components, seed);
    GmmModel model;
    model.means = seeding.means;
    model.covariances = seeding.covs;
    model.weights.assign(components, 1.0 / components);

    EmTrace trace;
    std::vector<double> resp(n * components);
    std::vector<double> scores(components);

    double prev_ll = -std::numeric_limits<double>::infinity();
    std::string reason = "max_iterations";
    int it = 0;
    for (; it < thresholds.max_iterations; ++it) {
        // E-step
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (int m = 0; m < components; ++m)
                scores[m] = std::log(model.weights[m]) +
                            log_gauss(background[i].u, background[i].v, model.means[m], model.covariances[m]);
            const double lse = log_sum_exp(scores);
            ll += lse;
            for (int m = 0; m < components; ++m) resp[i * components + m] = std::exp(scores[m] - lse);
        }
        trace.log_likelihood.push_back(ll);

        // M-step
        GmmModel next = model;
        for (int m = 0; m < components; ++m) {
            double lambda = 0.0, su = 0.0, sv = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * components + m];
                lambda += r;
                su += r * background[i].u;
                sv += r * background[i].v;
            }
            if (lambda < 1e-12) {
                // dead component: keep its parameters, weight follows lambda
                next.weights[m] = lambda / static_cast<double>(n);
                continue;
            }
            next.means[m] = {su / lambda, sv / lambda};
            Cov2 cv{0.0, 0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * components + m];
                const double du = background[i].u - next.means[m][0];
                const double dv = background[i].v - next.means[m][1];
                cv.xx += r * du * du;
                cv.xy += r * du * dv;
                cv.yy += r * dv * dv;
            }
            cv.xx /= lambda;
            cv.xy /= lambda;
            cv.yy /= lambda;
            next.covariances[m] = floor_cov(cv, kCovarianceFloor);
            next.weights[m] = lambda / static_cast<double>(n);
        }
        // guard against weight mass lost to dead components
        double wsum = 0.0;
        for (double w : next.weights) wsum += w;
        for (double& w : next.weights) w /= wsum;

        const double dmu = max_abs_delta_means(next, model);
        const double dsig = max_abs_delta_covs(next, model);
        const double dpi = max_abs_delta_weights(next, model);
        model = std::move(next);
        ++it;
        if (dmu <= thresholds.theta_mu) {
            reason = "theta_mu";
            break;
        }
        if (dsig <= thresholds.theta_sigma) {
            reason = "theta_sigma";
            break;
        }
        if (dpi <= thresholds.theta_pi) {
            reason = "theta_pi";
            break;
        }
        if (std::isfinite(prev_ll) && std::abs(ll - prev_ll) <= thresholds.theta_ll) {
            reason = "theta_ll";
            break;
        }
        prev_ll = ll;
        --it;
    }
    trace.iterations = static_cast<int>(trace.log_likelihood.size());
    trace.convergence_reason = reason;
    return GmmFit{std::move(model), std::move(trace)};
}

int assign_cluster(const GmmModel& model, double u, double v) {
    const std::vector<double> s = component_log_scores(model, u, v);
    int best = 0;
    for (int m = 1; m < model.components(); ++m)
        if (s[m] > s[best]) best = m;
    return best;
}

FlowField restore_motion(const GmmModel& model, const FlowField& field, bool soft_assign) {
    FlowField out(field.width, field.height);
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            const double u = field.u(x, y), v = field.v(x, y);
            double mu_u, mu_v;
            if (soft_assign) {
                const std::vector<double> s = component_log_scores(model, u, v);
                const double lse = log_sum_exp(s);
                mu_u = 0.0;
                mu_v = 0.0;
                for (int m = 0; m < model.components(); ++m) {
                    const double g = std::exp(s[m] - lse);
                    mu_u += g * model.means[m][0];
                    mu_v += g * model.means[m][1];
                }
            } else {
                const int m = assign_cluster(model, u, v);
                mu_u = model.means[m][0];
                mu_v = model.means[m][1];
            }
            out.u(x, y) = u - mu_u;
            out.v(x, y) = v - mu_v;
        }
    return out;
}

CorrectedSequence correct_sequence(const std::vector<FlowField>& fields, const PersonBoxes& boxes, int components,
                                   const ConvergenceThresholds& thresholds, std::uint64_t seed, bool soft_assign) {
    if (boxes.size() != fields.size())
        throw std::invalid_argument("correct_sequence: " + std::to_string(boxes.size()) + " box frames for " +
                                    std::to_string(fields.size()) + " flow frames");
    CorrectedSequence out;
    for (std::size_t f = 0; f < fields.size(); ++f) {
        SegmentedMotion seg = segment_motion(fields[f], boxes[f]);
        FrameDiagnostics diag;
        diag.frame = static_cast<int>(f);
        const MotionVectorSet* fit_set = &seg.background;
        if (seg.background.empty()) {
            fit_set = &seg.foreground;  // boxes cover the frame: fall back to all vectors
            diag.empty_background_fallback = true;
        }
        try {
            GmmFit fit = fit_gmm(*fit_set, components, thresholds, seed + f);
            diag.iterations = fit.trace.iterations;
            diag.final_log_likelihood = fit.trace.log_likelihood.back();
            diag.convergence_reason = fit.trace.convergence_reason;
            diag.means = fit.model.means;
            out.fields.push_back(restore_motion(fit.model, fields[f], soft_assign));
        } catch (const std::exception& e) {
            throw std::runtime_error("frame " + std::to_string(f) + ": " + e.what());
        }
        out.diagnostics.push_back(std::move(diag));
    }
    return out;
}

}  // namespace mmdet
