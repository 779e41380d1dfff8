#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace btsnet {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense N-dimensional array of doubles, row-major (last axis fastest).
// Doubles as an autograd node: ops link result tensors to their inputs and
// attach a closure that pushes the gradient one step backward. Tensors are
// immutable once produced by an op; the gradient buffer of a node is written
// by exactly one backward() sweep.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;   // same length as data iff requires_grad
    bool requires_grad = false;

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

    void zero_grad();
    void accumulate_grad(std::size_t i, double v) { grad[i] += v; }
};

std::size_t numel(const std::vector<int>& shape);

// Row-major flattening (Horner over extents) and its inverse.
std::size_t flat_index(const std::vector<int>& shape, const std::vector<int>& idx);
std::vector<int> unflatten_index(const std::vector<int>& shape, std::size_t flat);

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
TensorPtr scalar(double value);

// Thread-local autograd switch. While disabled, ops produce plain value
// tensors with no parents, so intermediates are freed as they go out of scope.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// Reverse sweep from a scalar root. Gradients accumulate into every reachable
// tensor with requires_grad; leaves keep theirs until zero_grad().
void backward(const TensorPtr& root);

// --- elementwise ops ------------------------------------------------------

// Shapes must match exactly.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);

// Elementwise product with broadcasting on b: b may omit leading axes of a
// (alignment is at the trailing axes) and any aligned axis of b may have
// extent 1. Backward sums the gradient over broadcast positions of b.
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

TensorPtr reshape(const TensorPtr& x, std::vector<int> shape);
TensorPtr sum_all(const TensorPtr& x);   // scalar, shape {1}

// Slice index i of axis 1: (N, M, rest...) -> (N, rest...).
TensorPtr slice_axis1(const TensorPtr& x, int i);

// --- gradient checking ------------------------------------------------------

// Max over elements of |analytic - central_fd| / max(1, |analytic|, |fd|),
// with f a deterministic scalar-valued function and eps in (0, 1e-2].
// x itself is never mutated.
double check_gradient(const std::function<TensorPtr(const TensorPtr&)>& f,
                      const TensorPtr& x, double eps);

// Same metric, but for a loss closed over `param` (a leaf inside a model).
// Checks the coordinates listed in `coords` (all coordinates when empty).
double check_gradient_wrt(const std::function<TensorPtr()>& loss,
                          const TensorPtr& param, double eps,
                          const std::vector<std::size_t>& coords = {});

// --- binary tensor format ---------------------------------------------------
// "BTSC" magic, u32 LE rank, rank x u32 LE extents, then values as f32 LE,
// row-major. Loading widens back to double.
void write_tensor(const std::string& path, const Tensor& t);
TensorPtr read_tensor(const std::string& path);

void ensure_finite(const Tensor& t, const char* op_name);

}  // namespace btsnet
