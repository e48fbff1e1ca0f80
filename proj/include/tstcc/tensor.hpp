#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tstcc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One vertex of the dynamic computation graph.  Created fresh every forward
// pass; freed when the last Tensor handle referencing it goes away.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // engaged lazily during backward / by leaves
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad (and data if needed) and accumulates into the
    // parents' grad buffers, which the engine has already allocated.
    std::function<void(const TensorNode&)> backward_fn;

    void ensure_grad();
};

// Value-semantics handle onto a graph node.  Copying a Tensor shares the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const;
    bool requires_grad() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();  // in-place updates (optimizer); never on graph interiors
    bool has_grad() const;
    const std::vector<double>& grad() const;  // throws ValueError when absent
    void zero_grad();

    double item() const;                              // scalar tensors only
    double at(std::initializer_list<std::size_t> idx) const;  // convenience for tests

    // Leaf copy of this tensor's values, detached from the graph.
    Tensor detach() const;

    // Reverse-mode sweep from a scalar; accumulates into every reachable
    // requires_grad node's grad buffer.
    void backward() const;

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// ---- elementwise (binary ops broadcast: equal shape; one-element b; b equal
// ---- to a trailing suffix of a's shape; or b equal to a with trailing axes 1)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

// ---- reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);   // keeps the axis with extent 1
Tensor mean_axis(const Tensor& a, int axis);  // ditto

// ---- shape manipulation (all produce fresh storage)
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor swap_axes(const Tensor& a, int ax0, int ax1);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t len);

// ---- linear algebra (trans flags read the operand transposed, no copy)
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// ---- structured nn primitives
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int pad_left, int pad_right);
Tensor maxpool1d(const Tensor& input, int kernel, int stride);
Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    std::vector<double>& running_mean, std::vector<double>& running_var,
                    bool train, double momentum = 0.1, double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace tstcc
