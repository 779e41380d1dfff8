#include "btsnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace btsnet {

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const std::vector<int>& shape) {
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    }
}

}  // namespace

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
}

std::size_t flat_index(const std::vector<int>& shape, const std::vector<int>& idx) {
    if (idx.size() != shape.size()) throw std::invalid_argument("flat_index: rank mismatch");
    std::size_t flat = 0;
    for (std::size_t k = 0; k < shape.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= shape[k]) throw std::out_of_range("flat_index: out of bounds");
        flat = flat * static_cast<std::size_t>(shape[k]) + static_cast<std::size_t>(idx[k]);
    }
    return flat;
}

std::vector<int> unflatten_index(const std::vector<int>& shape, std::size_t flat) {
    std::vector<int> idx(shape.size(), 0);
    for (std::size_t k = shape.size(); k-- > 0;) {
        idx[k] = static_cast<int>(flat % static_cast<std::size_t>(shape[k]));
        flat /= static_cast<std::size_t>(shape[k]);
    }
    if (flat != 0) throw std::out_of_range("unflatten_index: out of bounds");
    return idx;
}

void Tensor::zero_grad() {
    if (requires_grad) std::fill(grad.begin(), grad.end(), 0.0);
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (numel(shape) != data.size()) throw std::invalid_argument("make_tensor: data length does not match shape");
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad && grad_enabled();
    if (t->requires_grad) t->grad.assign(t->data.size(), 0.0);
    return t;
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
    std::vector<double> d(numel(shape), 0.0);
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

TensorPtr full(std::vector<int> shape, double value, bool requires_grad) {
    std::vector<double> d(numel(shape), value);
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

TensorPtr scalar(double value) { return make_tensor({1}, {value}); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

void ensure_finite(const Tensor& t, const char* op_name) {
    for (double v : t.data) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string(op_name) + ": non-finite value produced");
    }
}

namespace {

// Result tensor wired into the graph when grad mode is on and any parent
// requires a gradient.
TensorPtr make_op_result(std::vector<int> shape, std::vector<double> data,
                         std::vector<TensorPtr> parents,
                         std::function<void(Tensor&)> backward_fn, const char* op_name) {
    bool rg = false;
    if (grad_enabled()) {
        for (const auto& p : parents) rg = rg || p->requires_grad;
    }
    auto t = make_tensor(std::move(shape), std::move(data), rg);
    ensure_finite(*t, op_name);
    if (rg) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

}  // namespace

void backward(const TensorPtr& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) throw std::invalid_argument("backward: root does not require grad");

    // Iterative post-order DFS over parents, then replay in reverse.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw std::invalid_argument("add: shape mismatch");
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    TensorPtr pa = a, pb = b;
    return make_op_result(a->shape, std::move(out), {a, b},
        [pa, pb](Tensor& self) {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        },
        "add");
}

namespace {

// Maps a flat index of `a` onto the flat index of broadcast operand `b`.
// Alignment is at the trailing axes; aligned extent-1 axes of b are pinned.
struct BroadcastMap {
    std::vector<std::size_t> a_strides;  // strides of the aligned a-axes
    std::vector<int> a_extents;
    std::vector<std::size_t> b_strides;  // 0 where b has extent 1
    std::size_t lead;                    // product of a's unaligned leading extents

    static BroadcastMap build(const std::vector<int>& ashape, const std::vector<int>& bshape) {
        if (bshape.size() > ashape.size())
            throw std::invalid_argument("mul: broadcast operand has higher rank");
        const std::size_t off = ashape.size() - bshape.size();
        for (std::size_t k = 0; k < bshape.size(); ++k) {
            if (bshape[k] != ashape[off + k] && bshape[k] != 1)
                throw std::invalid_argument("mul: shapes are not broadcastable");
        }
        BroadcastMap m;
        m.lead = 1;
        for (std::size_t k = 0; k < off; ++k) m.lead *= static_cast<std::size_t>(ashape[k]);
        m.a_extents.assign(ashape.begin() + static_cast<std::ptrdiff_t>(off), ashape.end());
        m.a_strides.assign(bshape.size(), 1);
        m.b_strides.assign(bshape.size(), 1);
        for (std::size_t k = bshape.size(); k-- > 0;) {
            if (k + 1 < bshape.size()) {
                m.a_strides[k] = m.a_strides[k + 1] * static_cast<std::size_t>(m.a_extents[k + 1]);
                m.b_strides[k] = m.b_strides[k + 1] * static_cast<std::size_t>(bshape[k + 1]);
            }
        }
        for (std::size_t k = 0; k < bshape.size(); ++k) {
            if (bshape[k] == 1) m.b_strides[k] = 0;
        }
        return m;
    }

    std::size_t b_index(std::size_t a_flat) const {
        std::size_t idx = 0;
        for (std::size_t k = a_strides.size(); k-- > 0;) {
            const auto e = static_cast<std::size_t>(a_extents[k]);
            idx += (a_flat % e) * b_strides[k];
            a_flat /= e;
        }
        return idx;  // leading axes of a all collapse onto the same b element
    }
};

}  // namespace

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    const BroadcastMap map = BroadcastMap::build(a->shape, b->shape);
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[map.b_index(i)];
    TensorPtr pa = a, pb = b;
    return make_op_result(a->shape, std::move(out), {a, b},
        [pa, pb, map](Tensor& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const std::size_t j = map.b_index(i);
                if (pa->requires_grad) pa->grad[i] += self.grad[i] * pb->data[j];
                if (pb->requires_grad) pb->grad[j] += self.grad[i] * pa->data[i];
            }
        },
        "mul");
}

TensorPtr reshape(const TensorPtr& x, std::vector<int> shape) {
    if (numel(shape) != x->size()) throw std::invalid_argument("reshape: element count mismatch");
    TensorPtr px = x;
    return make_op_result(std::move(shape), x->data, {x},
        [px](Tensor& self) {
            if (!px->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        },
        "reshape");
}

TensorPtr sum_all(const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    TensorPtr px = x;
    return make_op_result({1}, {s}, {x},
        [px](Tensor& self) {
            if (!px->requires_grad) return;
            const double g = self.grad[0];
            for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
        },
        "sum_all");
}

TensorPtr slice_axis1(const TensorPtr& x, int i) {
    if (x->rank() < 2) throw std::invalid_argument("slice_axis1: rank must be >= 2");
    const int n = x->extent(0), m = x->extent(1);
    if (i < 0 || i >= m) throw std::out_of_range("slice_axis1: index out of range");
    std::size_t rest = 1;
    for (int k = 2; k < x->rank(); ++k) rest *= static_cast<std::size_t>(x->extent(k));

    std::vector<int> out_shape;
    out_shape.push_back(n);
    for (int k = 2; k < x->rank(); ++k) out_shape.push_back(x->extent(k));

    std::vector<double> out(static_cast<std::size_t>(n) * rest);
    for (int b = 0; b < n; ++b) {
        const std::size_t src = (static_cast<std::size_t>(b) * static_cast<std::size_t>(m) +
                                 static_cast<std::size_t>(i)) * rest;
        std::copy_n(x->data.begin() + static_cast<std::ptrdiff_t>(src), rest,
                    out.begin() + static_cast<std::ptrdiff_t>(b) * static_cast<std::ptrdiff_t>(rest));
    }
    TensorPtr px = x;
    const std::size_t mm = static_cast<std::size_t>(m), ii = static_cast<std::size_t>(i);
    return make_op_result(std::move(out_shape), std::move(out), {x},
        [px, mm, ii, rest](Tensor& self) {
            if (!px->requires_grad) return;
            const std::size_t n = self.grad.size() / rest;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t dst = (b * mm + ii) * rest;
                for (std::size_t r = 0; r < rest; ++r) px->grad[dst + r] += self.grad[b * rest + r];
            }
        },
        "slice_axis1");
}

double check_gradient(const std::function<TensorPtr(const TensorPtr&)>& f,
                      const TensorPtr& x, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("check_gradient: eps out of range");

    auto leaf = make_tensor(x->shape, x->data, true);
    auto y = f(leaf);
    if (y->size() != 1) throw std::invalid_argument("check_gradient: f must be scalar-valued");
    if (!std::isfinite(y->data[0])) throw std::runtime_error("check_gradient: f(x) is non-finite");
    if (y->requires_grad) backward(y);  // else f ignores x and the gradient is zero
    const std::vector<double> analytic = leaf->grad;

    NoGradGuard ng;
    auto probe = make_tensor(x->shape, x->data, false);
    double max_rel = 0.0;
    for (std::size_t i = 0; i < probe->data.size(); ++i) {
        const double orig = probe->data[i];
        probe->data[i] = orig + eps;
        const double fp = f(probe)->data[0];
        probe->data[i] = orig - eps;
        const double fm = f(probe)->data[0];
        probe->data[i] = orig;
        const double fd = (fp - fm) / (2.0 * eps);
        const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(fd)});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - fd) / denom);
    }
    return max_rel;
}

double check_gradient_wrt(const std::function<TensorPtr()>& loss,
                          const TensorPtr& param, double eps,
                          const std::vector<std::size_t>& coords) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("check_gradient_wrt: eps out of range");
    if (!param->requires_grad) throw std::invalid_argument("check_gradient_wrt: param does not require grad");

    param->zero_grad();
    auto y = loss();
    if (y->size() != 1) throw std::invalid_argument("check_gradient_wrt: loss must be scalar-valued");
    if (!std::isfinite(y->data[0])) throw std::runtime_error("check_gradient_wrt: loss is non-finite");
    if (y->requires_grad) backward(y);
    const std::vector<double> analytic = param->grad;
    param->zero_grad();

    std::vector<std::size_t> cs = coords;
    if (cs.empty()) {
        cs.resize(param->size());
        for (std::size_t i = 0; i < cs.size(); ++i) cs[i] = i;
    }

    NoGradGuard ng;
    double max_rel = 0.0;
    for (std::size_t i : cs) {
        const double orig = param->data[i];
        param->data[i] = orig + eps;
        const double fp = loss()->data[0];
        param->data[i] = orig - eps;
        const double fm = loss()->data[0];
        param->data[i] = orig;
        const double fd = (fp - fm) / (2.0 * eps);
        const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(fd)});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - fd) / denom);
    }
    return max_rel;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("tensor file: truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("BTSC", 4);
    write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int e : t.shape) write_u32(os, static_cast<std::uint32_t>(e));
    for (double v : t.data) {
        const float f = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        write_u32(os, u);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

TensorPtr read_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "BTSC", 4) != 0)
        throw std::runtime_error("tensor file: bad magic in " + path);
    const std::uint32_t rank = read_u32(is);
    if (rank > 16) throw std::runtime_error("tensor file: implausible rank");
    std::vector<int> shape(rank);
    for (auto& e : shape) {
        const std::uint32_t v = read_u32(is);
        if (v == 0) throw std::runtime_error("tensor file: zero extent");
        e = static_cast<int>(v);
    }
    std::vector<double> data(numel(shape));
    for (auto& v : data) {
        const std::uint32_t u = read_u32(is);
        float f;
        std::memcpy(&f, &u, 4);
        v = static_cast<double>(f);
    }
    return make_tensor(std::move(shape), std::move(data));
}

}  // namespace btsnet
