#include "mmdet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mmdet {

std::vector<std::vector<int>> threshold_scores(const Tensor& scores, double theta) {
    if (scores.shape.size() != 2) throw std::invalid_argument("threshold_scores: expected T x C matrix");
    if (!(theta > 0.0 && theta < 1.0))
        throw std::invalid_argument("threshold_scores: theta must lie in (0,1), got " + std::to_string(theta));
    const int T = scores.rows(), C = scores.cols();
    std::vector<std::vector<int>> out(T, std::vector<int>(C, 0));
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) out[t][c] = scores.at(t, c) >= theta ? 1 : 0;
    return out;
}

std::vector<ActionSegment> regress_segments(const Tensor& scores, double theta, int segment_len,
                                            const std::string& video) {
    const auto binary = threshold_scores(scores, theta);
    const int T = scores.rows(), C = scores.cols();
    if (segment_len < 1 || segment_len > T)
        throw std::invalid_argument("regress_segments: segment length must lie in [1, T]");

    // chunk boundaries, ragged tail allowed
    std::vector<std::pair<int, int>> chunks;  // [begin, end) frames
    for (int b = 0; b < T; b += segment_len) chunks.emplace_back(b, std::min(T, b + segment_len));
    const int n_chunks = static_cast<int>(chunks.size());

    std::vector<ActionSegment> out;
    for (int c = 0; c < C; ++c) {
        // majority vote per chunk; ties count as positive
        std::vector<int> label(n_chunks);
        for (int n = 0; n < n_chunks; ++n) {
            int ones = 0;
            for (int t = chunks[n].first; t < chunks[n].second; ++t) ones += binary[t][c];
            const int len = chunks[n].second - chunks[n].first;
            label[n] = (2 * ones >= len) ? 1 : 0;
        }
        // merge adjacent chunks with equal labels, then extract boundaries
        int n = 0;
        while (n < n_chunks) {
            int e = n;
            while (e + 1 < n_chunks && label[e + 1] == label[n]) ++e;
            if (label[n] == 1) {
                const int fb = chunks[n].first, fe = chunks[e].second;
                int first = -1, last = -1;
                for (int t = fb; t < fe; ++t)
                    if (binary[t][c]) {
                        if (first < 0) first = t;
                        last = t;
                    }
                if (first >= 0) {
                    double mean = 0.0;
                    for (int t = first; t <= last; ++t) mean += scores.at(t, c);
                    mean /= (last - first + 1);
                    out.push_back(ActionSegment{video, c, first, last, mean});
                }
            }
            n = e + 1;
        }
    }
    return out;
}

double tiou(const ActionSegment& a, const ActionSegment& b) {
    const int inter = std::min(a.end, b.end) - std::max(a.start, b.start) + 1;
    if (inter <= 0) return 0.0;
    const int len_a = a.end - a.start + 1;
    const int len_b = b.end - b.start + 1;
    return static_cast<double>(inter) / static_cast<double>(len_a + len_b - inter);
}

namespace {

double average_precision(std::vector<std::pair<double, bool>>& ranked, int n_gt) {
    // ranked: (score, is_tp) already sorted by rank
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const auto& [score, is_tp] : ranked) {
        (is_tp ? tp : fp) += 1;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / n_gt);
    }
    // all-point interpolation: area under the precision envelope
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        double envelope = precision[i];
        for (std::size_t j = i + 1; j < precision.size(); ++j) envelope = std::max(envelope, precision[j]);
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * envelope;
            prev_recall = recall[i];
        }
    }
    return ap;
}

}  // namespace

EvalReport evaluate_map(const std::vector<ActionSegment>& predictions, const std::vector<ActionSegment>& ground_truth,
                        const std::vector<double>& tiou_thresholds) {
    if (tiou_thresholds.empty()) throw std::invalid_argument("evaluate_map: no tIoU thresholds given");
    std::set<int> gt_classes, pred_classes;
    for (const auto& g : ground_truth) gt_classes.insert(g.cls);
    for (const auto& p : predictions) pred_classes.insert(p.cls);

    EvalReport report;
    for (double thr : tiou_thresholds) {
        ThresholdReport tr;
        tr.threshold = thr;
        for (int c : pred_classes)
            if (!gt_classes.count(c)) tr.skipped_classes.push_back(c);

        double ap_sum = 0.0;
        for (int c : gt_classes) {
            std::vector<const ActionSegment*> preds;
            for (const auto& p : predictions)
                if (p.cls == c) preds.push_back(&p);
            std::sort(preds.begin(), preds.end(), [](const ActionSegment* a, const ActionSegment* b) {
                if (a->score != b->score) return a->score > b->score;
                if (a->video != b->video) return a->video < b->video;
                if (a->start != b->start) return a->start < b->start;
                return a->end < b->end;
            });
            std::vector<const ActionSegment*> gts;
            for (const auto& g : ground_truth)
                if (g.cls == c) gts.push_back(&g);
            std::vector<bool> matched(gts.size(), false);

            std::vector<std::pair<double, bool>> ranked;
            for (const ActionSegment* p : preds) {
                int best = -1;
                double best_tiou = 0.0;
                for (std::size_t gi = 0; gi < gts.size(); ++gi) {
                    if (matched[gi] || gts[gi]->video != p->video) continue;
                    const double ov = tiou(*p, *gts[gi]);
                    if (ov > best_tiou) {
                        best_tiou = ov;
                        best = static_cast<int>(gi);
                    }
                }
                const bool is_tp = best >= 0 && best_tiou >= thr;
                if (is_tp) matched[best] = true;
                ranked.emplace_back(p->score, is_tp);
            }
            const double ap = ranked.empty() ? 0.0 : average_precision(ranked, static_cast<int>(gts.size()));
            tr.ap_per_class[c] = ap;
            ap_sum += ap;
        }
        tr.map = gt_classes.empty() ? 0.0 : ap_sum / static_cast<double>(gt_classes.size());
        report.per_threshold.push_back(std::move(tr));
    }
    double total = 0.0;
    for (const auto& tr : report.per_threshold) total += tr.map;
    report.average_map = total / static_cast<double>(report.per_threshold.size());
    return report;
}

std::string eval_report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["per_threshold"] = nlohmann::ordered_json::array();
    for (const auto& tr : report.per_threshold) {
        nlohmann::ordered_json tj;
        tj["tiou"] = tr.threshold;
        nlohmann::ordered_json ap = nlohmann::ordered_json::object();
        for (const auto& [cls, v] : tr.ap_per_class) ap[std::to_string(cls)] = v;
        tj["ap_per_class"] = std::move(ap);
        tj["skipped_classes"] = tr.skipped_classes;
        tj["map"] = tr.map;
        j["per_threshold"].push_back(std::move(tj));
    }
    j["average_map"] = report.average_map;
    return j.dump(2);
}

std::string eval_report_table(const EvalReport& report) {
    std::ostringstream os;
    os << "  tIoU       mAP\n";
    os << "------  --------\n";
    char buf[64];
    for (const auto& tr : report.per_threshold) {
        std::snprintf(buf, sizeof(buf), "%6.2f  %8.4f\n", tr.threshold, tr.map);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "   avg  %8.4f\n", report.average_map);
    os << buf;
    return os.str();
}

std::vector<ActionSegment> read_segments_json(const std::filesystem::path& path, bool require_score) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
    }
    if (!j.is_array()) throw std::runtime_error(path.string() + ": segments document must be an array");
    std::vector<ActionSegment> out;
    for (const auto& e : j) {
        ActionSegment s;
        s.video = e.at("video").get<std::string>();
        s.cls = e.at("class").get<int>();
        s.start = e.at("start").get<int>();
        s.end = e.at("end").get<int>();
        if (e.contains("score"))
            s.score = e.at("score").get<double>();
        else if (require_score)
            throw std::runtime_error(path.string() + ": prediction entry missing score");
        if (s.start < 0 || s.end < s.start)
            throw std::runtime_error(path.string() + ": invalid segment bounds [" + std::to_string(s.start) + "," +
                                     std::to_string(s.end) + "]");
        out.push_back(std::move(s));
    }
    return out;
}

void write_segments_json(const std::vector<ActionSegment>& segments, const std::filesystem::path& path,
                         bool with_score) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& s : segments) {
        nlohmann::ordered_json e;
        e["video"] = s.video;
        e["class"] = s.cls;
        e["start"] = s.start;
        e["end"] = s.end;
        if (with_score) e["score"] = s.score;
        j.push_back(std::move(e));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for write");
    out << j.dump(2) << '\n';
}

}  // namespace mmdet
