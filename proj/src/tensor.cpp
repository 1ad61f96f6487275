#include "mmdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mmdet {

namespace {

std::size_t shape_count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(s));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(shape_count(shape), 0.0) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_count(shape) != data.size())
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

Tensor Tensor::full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

NodeId Graph::emit(Tensor value, bool track, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.track = track;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Graph::grad_buf(NodeId id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
        n.grad = Tensor(n.value.shape);
        n.grad_live = true;
    }
    return n.grad;
}

void Graph::accumulate(NodeId id, const std::vector<double>& g) {
    if (!nodes_[id].track) return;
    Tensor& buf = grad_buf(id);
    for (std::size_t i = 0; i < g.size(); ++i) buf.data[i] += g[i];
}

const Tensor& Graph::grad(NodeId id) {
    return grad_buf(id);
}

NodeId Graph::input(Tensor value) { return emit(std::move(value), true, nullptr); }

NodeId Graph::constant(Tensor value) { return emit(std::move(value), false, nullptr); }

static void check_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    check_2d(ta, "matmul");
    check_2d(tb, "matmul");
    if (ta.cols() != tb.rows())
        throw std::invalid_argument("matmul: inner extents differ, " + shape_str(ta.shape) + " vs " +
                                    shape_str(tb.shape));
    const int m = ta.rows(), k = ta.cols(), n = tb.cols();
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = ta.at(i, p);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) out.at(i, j) += av * tb.at(p, j);
        }
    bool track = nodes_[a].track || nodes_[b].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, b, id, m, k, n] {
            const Tensor& g = nodes_[id].grad;
            const Tensor& ta2 = nodes_[a].value;
            const Tensor& tb2 = nodes_[b].value;
            if (nodes_[a].track) {
                Tensor& ga = grad_buf(a);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gv = g.at(i, j);
                        if (gv == 0.0) continue;
                        for (int p = 0; p < k; ++p) ga.at(i, p) += gv * tb2.at(p, j);
                    }
            }
            if (nodes_[b].track) {
                Tensor& gb = grad_buf(b);
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const double av = ta2.at(i, p);
                        if (av == 0.0) continue;
                        for (int j = 0; j < n; ++j) gb.at(p, j) += av * g.at(i, j);
                    }
            }
        };
    return id;
}

NodeId Graph::matmul_nt(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    check_2d(ta, "matmul_nt");
    check_2d(tb, "matmul_nt");
    if (ta.cols() != tb.cols())
        throw std::invalid_argument("matmul_nt: column extents differ, " + shape_str(ta.shape) + " vs " +
                                    shape_str(tb.shape));
    const int m = ta.rows(), k = ta.cols(), n = tb.rows();
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ta.at(i, p) * tb.at(j, p);
            out.at(i, j) = acc;
        }
    bool track = nodes_[a].track || nodes_[b].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, b, id, m, k, n] {
            const Tensor& g = nodes_[id].grad;
            const Tensor& ta2 = nodes_[a].value;
            const Tensor& tb2 = nodes_[b].value;
            if (nodes_[a].track) {
                Tensor& ga = grad_buf(a);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gv = g.at(i, j);
                        if (gv == 0.0) continue;
                        for (int p = 0; p < k; ++p) ga.at(i, p) += gv * tb2.at(j, p);
                    }
            }
            if (nodes_[b].track) {
                Tensor& gb = grad_buf(b);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gv = g.at(i, j);
                        if (gv == 0.0) continue;
                        for (int p = 0; p < k; ++p) gb.at(j, p) += gv * ta2.at(i, p);
                    }
            }
        };
    return id;
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!ta.same_shape(tb))
        throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    bool track = nodes_[a].track || nodes_[b].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, b, id] {
            accumulate(a, nodes_[id].grad.data);
            accumulate(b, nodes_[id].grad.data);
        };
    return id;
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!ta.same_shape(tb))
        throw std::invalid_argument("sub: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
    bool track = nodes_[a].track || nodes_[b].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, b, id] {
            accumulate(a, nodes_[id].grad.data);
            if (nodes_[b].track) {
                Tensor& gb = grad_buf(b);
                const Tensor& g = nodes_[id].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
            }
        };
    return id;
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!ta.same_shape(tb))
        throw std::invalid_argument("mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    bool track = nodes_[a].track || nodes_[b].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, b, id] {
            const Tensor& g = nodes_[id].grad;
            if (nodes_[a].track) {
                Tensor& ga = grad_buf(a);
                const Tensor& tb2 = nodes_[b].value;
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * tb2.data[i];
            }
            if (nodes_[b].track) {
                Tensor& gb = grad_buf(b);
                const Tensor& ta2 = nodes_[a].value;
                for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * ta2.data[i];
            }
        };
    return id;
}

NodeId Graph::scale(NodeId a, double s) {
    const Tensor& ta = nodes_[a].value;
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * s;
    bool track = nodes_[a].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, id, s] {
            Tensor& ga = grad_buf(a);
            const Tensor& g = nodes_[id].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * s;
        };
    return id;
}

NodeId Graph::add_row(NodeId a, NodeId bias) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[bias].value;
    check_2d(ta, "add_row");
    if (tb.shape.size() != 1 || tb.shape[0] != ta.cols())
        throw std::invalid_argument("add_row: bias shape " + shape_str(tb.shape) + " does not match " +
                                    shape_str(ta.shape));
    Tensor out(ta.shape);
    const int r = ta.rows(), c = ta.cols();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) = ta.at(i, j) + tb.data[j];
    bool track = nodes_[a].track || nodes_[bias].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, bias, id, r, c] {
            const Tensor& g = nodes_[id].grad;
            accumulate(a, g.data);
            if (nodes_[bias].track) {
                Tensor& gb = grad_buf(bias);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gb.data[j] += g.at(i, j);
            }
        };
    return id;
}

NodeId Graph::softmax_rows(NodeId a) {
    const Tensor& ta = nodes_[a].value;
    check_2d(ta, "softmax_rows");
    const int r = ta.rows(), c = ta.cols();
    Tensor out(ta.shape);
    for (int i = 0; i < r; ++i) {
        double mx = ta.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, ta.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(ta.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) out.at(i, j) /= z;
    }
    bool track = nodes_[a].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, id, r, c] {
            Tensor& ga = grad_buf(a);
            const Tensor& g = nodes_[id].grad;
            const Tensor& s = nodes_[id].value;
            for (int i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g.at(i, j) * s.at(i, j);
                for (int j = 0; j < c; ++j) ga.at(i, j) += s.at(i, j) * (g.at(i, j) - dot);
            }
        };
    return id;
}

NodeId Graph::layer_norm(NodeId a, NodeId gain, NodeId bias, double eps) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tg = nodes_[gain].value;
    const Tensor& tb = nodes_[bias].value;
    check_2d(ta, "layer_norm");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    const int r = ta.rows(), c = ta.cols();
    if (tg.shape.size() != 1 || tg.shape[0] != c || tb.shape.size() != 1 || tb.shape[0] != c)
        throw std::invalid_argument("layer_norm: gain/bias must have length " + std::to_string(c));
    Tensor out(ta.shape);
    // cache x-hat and inverse std per row for the backward pass
    auto xhat = std::make_shared<Tensor>(ta.shape);
    auto istd = std::make_shared<std::vector<double>>(r);
    for (int i = 0; i < r; ++i) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += ta.at(i, j);
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = ta.at(i, j) - mean;
            var += d * d;
        }
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        (*istd)[i] = is;
        for (int j = 0; j < c; ++j) {
            const double xh = (ta.at(i, j) - mean) * is;
            xhat->at(i, j) = xh;
            out.at(i, j) = tg.data[j] * xh + tb.data[j];
        }
    }
    bool track = nodes_[a].track || nodes_[gain].track || nodes_[bias].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, gain, bias, id, r, c, xhat, istd] {
            const Tensor& g = nodes_[id].grad;
            const Tensor& tg2 = nodes_[gain].value;
            if (nodes_[gain].track) {
                Tensor& gg = grad_buf(gain);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gg.data[j] += g.at(i, j) * xhat->at(i, j);
            }
            if (nodes_[bias].track) {
                Tensor& gb = grad_buf(bias);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gb.data[j] += g.at(i, j);
            }
            if (nodes_[a].track) {
                Tensor& ga = grad_buf(a);
                for (int i = 0; i < r; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double gj = g.at(i, j) * tg2.data[j];
                        m1 += gj;
                        m2 += gj * xhat->at(i, j);
                    }
                    m1 /= c;
                    m2 /= c;
                    for (int j = 0; j < c; ++j) {
                        const double gj = g.at(i, j) * tg2.data[j];
                        ga.at(i, j) += (gj - m1 - xhat->at(i, j) * m2) * (*istd)[i];
                    }
                }
            }
        };
    return id;
}

NodeId Graph::conv1d(NodeId a, NodeId kernel, NodeId bias) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tk = nodes_[kernel].value;
    const Tensor& tb = nodes_[bias].value;
    check_2d(ta, "conv1d");
    if (tk.shape.size() != 3)
        throw std::invalid_argument("conv1d: kernel must be k x Cin x Cout, got " + shape_str(tk.shape));
    const int T = ta.rows(), cin = ta.cols();
    const int k = tk.shape[0], kcin = tk.shape[1], cout = tk.shape[2];
    if (k % 2 == 0) throw std::invalid_argument("conv1d: kernel size must be odd, got " + std::to_string(k));
    if (kcin != cin)
        throw std::invalid_argument("conv1d: kernel Cin " + std::to_string(kcin) + " != input width " +
                                    std::to_string(cin));
    if (tb.shape.size() != 1 || tb.shape[0] != cout)
        throw std::invalid_argument("conv1d: bias must have length " + std::to_string(cout));
    const int half = k / 2;
    auto kidx = [cin, cout](int dk, int ci, int co) {
        return (static_cast<std::size_t>(dk) * cin + ci) * cout + co;
    };
    Tensor out({T, cout});
    for (int t = 0; t < T; ++t)
        for (int dk = 0; dk < k; ++dk) {
            const int ts = t + dk - half;
            if (ts < 0 || ts >= T) continue;
            for (int ci = 0; ci < cin; ++ci) {
                const double x = ta.at(ts, ci);
                if (x == 0.0) continue;
                for (int co = 0; co < cout; ++co) out.at(t, co) += x * tk.data[kidx(dk, ci, co)];
            }
        }
    for (int t = 0; t < T; ++t)
        for (int co = 0; co < cout; ++co) out.at(t, co) += tb.data[co];
    bool track = nodes_[a].track || nodes_[kernel].track || nodes_[bias].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, kernel, bias, id, T, cin, cout, k, half, kidx] {
            const Tensor& g = nodes_[id].grad;
            const Tensor& ta2 = nodes_[a].value;
            const Tensor& tk2 = nodes_[kernel].value;
            if (nodes_[bias].track) {
                Tensor& gb = grad_buf(bias);
                for (int t = 0; t < T; ++t)
                    for (int co = 0; co < cout; ++co) gb.data[co] += g.at(t, co);
            }
            if (nodes_[kernel].track) {
                Tensor& gk = grad_buf(kernel);
                for (int t = 0; t < T; ++t)
                    for (int dk = 0; dk < k; ++dk) {
                        const int ts = t + dk - half;
                        if (ts < 0 || ts >= T) continue;
                        for (int ci = 0; ci < cin; ++ci) {
                            const double x = ta2.at(ts, ci);
                            if (x == 0.0) continue;
                            for (int co = 0; co < cout; ++co) gk.data[kidx(dk, ci, co)] += x * g.at(t, co);
                        }
                    }
            }
            if (nodes_[a].track) {
                Tensor& ga = grad_buf(a);
                for (int t = 0; t < T; ++t)
                    for (int dk = 0; dk < k; ++dk) {
                        const int ts = t + dk - half;
                        if (ts < 0 || ts >= T) continue;
                        for (int ci = 0; ci < cin; ++ci) {
                            double acc = 0.0;
                            for (int co = 0; co < cout; ++co) acc += tk2.data[kidx(dk, ci, co)] * g.at(t, co);
                            ga.at(ts, ci) += acc;
                        }
                    }
            }
        };
    return id;
}

NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int r = nodes_[parts[0]].value.rows();
    int total = 0;
    bool track = false;
    for (NodeId p : parts) {
        const Tensor& t = nodes_[p].value;
        check_2d(t, "concat_cols");
        if (t.rows() != r) throw std::invalid_argument("concat_cols: row extents differ");
        total += t.cols();
        track = track || nodes_[p].track;
    }
    Tensor out({r, total});
    int off = 0;
    for (NodeId p : parts) {
        const Tensor& t = nodes_[p].value;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < t.cols(); ++j) out.at(i, off + j) = t.at(i, j);
        off += t.cols();
    }
    NodeId id = emit(std::move(out), track, nullptr);
    if (track) {
        std::vector<NodeId> ps = parts;
        nodes_[id].back = [this, ps, id, r] {
            const Tensor& g = nodes_[id].grad;
            int off2 = 0;
            for (NodeId p : ps) {
                const int w = nodes_[p].value.cols();
                if (nodes_[p].track) {
                    Tensor& gp = grad_buf(p);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < w; ++j) gp.at(i, j) += g.at(i, off2 + j);
                }
                off2 += w;
            }
        };
    }
    return id;
}

NodeId Graph::gelu(NodeId a) {
    const Tensor& ta = nodes_[a].value;
    Tensor out(ta.shape);
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double x = ta.data[i];
        out.data[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    bool track = nodes_[a].track;
    NodeId id = emit(std::move(out), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, id] {
            Tensor& ga = grad_buf(a);
            const Tensor& g = nodes_[id].grad;
            const Tensor& ta2 = nodes_[a].value;
            constexpr double inv_sqrt2 = 0.7071067811865475244;
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                const double x = ta2.data[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ga.data[i] += g.data[i] * (cdf + x * pdf);
            }
        };
    return id;
}

NodeId Graph::sum(NodeId a) {
    const Tensor& ta = nodes_[a].value;
    double acc = 0.0;
    for (double v : ta.data) acc += v;
    bool track = nodes_[a].track;
    NodeId id = emit(Tensor({1}, {acc}), track, nullptr);
    if (track)
        nodes_[id].back = [this, a, id] {
            Tensor& ga = grad_buf(a);
            const double g = nodes_[id].grad.data[0];
            for (double& v : ga.data) v += g;
        };
    return id;
}

NodeId Graph::detection_loss(NodeId yhat, const Tensor& target, double alpha) {
    const Tensor& yh = nodes_[yhat].value;
    check_2d(yh, "detection_loss");
    if (!yh.same_shape(target))
        throw std::invalid_argument("detection_loss: shape mismatch " + shape_str(yh.shape) + " vs " +
                                    shape_str(target.shape));
    const int T = yh.rows(), C = yh.cols();
    for (int t = 0; t < T; ++t) {
        int ones = 0;
        for (int c = 0; c < C; ++c) {
            const double v = target.at(t, c);
            if (v == 1.0)
                ++ones;
            else if (v != 0.0)
                throw std::invalid_argument("detection_loss: target row " + std::to_string(t) + " is not one-hot");
        }
        if (ones != 1)
            throw std::invalid_argument("detection_loss: target row " + std::to_string(t) + " is not one-hot");
    }
    constexpr double log_clamp = 1e-12;

    double ce = 0.0;
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
            if (target.at(t, c) == 1.0) ce -= std::log(std::max(yh.at(t, c), log_clamp));

    // soft temporal IoU per class present in the target
    auto present = std::make_shared<std::vector<int>>();
    auto inter = std::make_shared<std::vector<double>>(C, 0.0);
    auto uni = std::make_shared<std::vector<double>>(C, 0.0);
    for (int c = 0; c < C; ++c) {
        bool has = false;
        for (int t = 0; t < T; ++t)
            if (target.at(t, c) == 1.0) has = true;
        if (!has) continue;
        present->push_back(c);
        for (int t = 0; t < T; ++t) {
            (*inter)[c] += std::min(yh.at(t, c), target.at(t, c));
            (*uni)[c] += std::max(yh.at(t, c), target.at(t, c));
        }
    }
    double tiou_mean = 0.0;
    for (int c : *present) tiou_mean += (*inter)[c] / (*uni)[c];
    tiou_mean /= static_cast<double>(present->size());
    const double loss = ce + alpha * (1.0 - tiou_mean);

    Tensor tcopy = target;
    bool track = nodes_[yhat].track;
    NodeId id = emit(Tensor({1}, {loss}), track, nullptr);
    if (track)
        nodes_[id].back = [this, yhat, id, T, C, alpha, present, inter, uni, tcopy] {
            Tensor& gy = grad_buf(yhat);
            const Tensor& yh2 = nodes_[yhat].value;
            const double g = nodes_[id].grad.data[0];
            constexpr double log_clamp = 1e-12;
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < C; ++c)
                    if (tcopy.at(t, c) == 1.0 && yh2.at(t, c) > log_clamp) gy.at(t, c) -= g / yh2.at(t, c);
            const double scale = g * alpha / static_cast<double>(present->size());
            for (int c : *present) {
                const double m = (*inter)[c], u = (*uni)[c];
                for (int t = 0; t < T; ++t) {
                    // y is one-hot: yhat < 1 drives min when y==1, max when y==0
                    if (tcopy.at(t, c) == 1.0)
                        gy.at(t, c) -= scale * (1.0 / u);
                    else
                        gy.at(t, c) -= scale * (-m / (u * u));
                }
            }
        };
    return id;
}

void Graph::backward(NodeId loss) {
    if (nodes_[loss].value.size() != 1)
        throw std::invalid_argument("backward: loss node must be scalar, got shape " +
                                    shape_str(nodes_[loss].value.shape));
    grad_buf(loss).data[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.track || !n.grad_live || !n.back) continue;
        n.back();
    }
}

}  // namespace mmdet
