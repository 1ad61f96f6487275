#pragma once

#include <functional>
#include <string>
#include <vector>

namespace mmdet {

// Dense row-major tensor of doubles. Immutable by convention once handed to a
// Graph; the autodiff tape copies nothing, so callers must not mutate values
// that a live Graph references.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v);
    static Tensor identity(int n);

    std::size_t size() const { return data.size(); }

    // 2-D accessors
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }
    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::string shape_str(const std::vector<int>& s);

using NodeId = int;

// Reverse-mode tape. Nodes are appended in topological order; backward()
// replays them once in reverse. A Graph is confined to one thread.
class Graph {
public:
    // Leaf with gradient tracking (parameters, inputs under test).
    NodeId input(Tensor value);
    // Leaf without gradient tracking.
    NodeId constant(Tensor value);

    NodeId matmul(NodeId a, NodeId b);
    // a * b^T, avoids materializing transposes for attention scores
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    // broadcast-add a length-C vector to every row of a T x C matrix
    NodeId add_row(NodeId a, NodeId bias);
    NodeId softmax_rows(NodeId a);
    NodeId layer_norm(NodeId a, NodeId gain, NodeId bias, double eps);
    // a: T x Cin, kernel: k x Cin x Cout (k odd), bias: Cout; zero "same" padding
    NodeId conv1d(NodeId a, NodeId kernel, NodeId bias);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId gelu(NodeId a);
    NodeId sum(NodeId a);
    // cross-entropy + alpha * (1 - mean soft temporal IoU over classes present
    // in the one-hot target); log clamped at 1e-12
    NodeId detection_loss(NodeId yhat, const Tensor& target_onehot, double alpha);

    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    // Zero tensor if the node never received gradient.
    const Tensor& grad(NodeId id);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool track = false;
        bool grad_live = false;
        std::function<void()> back;
    };

    std::vector<Node> nodes_;

    NodeId emit(Tensor value, bool track, std::function<void()> back);
    Tensor& grad_buf(NodeId id);
    void accumulate(NodeId id, const std::vector<double>& g);
    friend struct GraphOps;
};

}  // namespace mmdet
