#include "mga/ops.hpp"

#include "mga/error.hpp"
#include "mga/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mga::ops {

using detail::make_result;
using detail::Node;

namespace {

// Gradient buffer of a parent, or nullptr when it does not need one.
double* grad_of(Node& self, std::size_t parent) {
    Node& p = *self.parents[parent];
    return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

const std::vector<double>& value_of(Node& self, std::size_t parent) { return self.parents[parent]->value; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank_at_least(const char* op, const Tensor& x, std::size_t rank) {
    if (x.rank() < rank) {
        throw DimensionError(std::string(op) + ": expected rank >= " + std::to_string(rank) + ", got " +
                             shape_str(x.shape()));
    }
}

// Row-major transpose of an r x c matrix into out (c x r).
void transpose_into(const double* in, std::size_t r, std::size_t c, double* out) {
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = in[i * c + j];
        }
    }
}

void add_into(const std::vector<double>& src, double* dst) {
    kernels::axpy(src.size(), 1.0, src.data(), dst);
}

struct SpatialView {
    std::size_t batch; // product of all axes before C
    std::size_t channels;
    std::size_t h;
    std::size_t w;
};

SpatialView spatial_view(const char* op, const Tensor& x) {
    require_rank_at_least(op, x, 3);
    const Shape& s = x.shape();
    const std::size_t r = s.size();
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 3 < r; ++i) {
        batch *= s[i];
    }
    return {batch, s[r - 3], s[r - 2], s[r - 1]};
}

void pad_plane(const double* in, std::size_t h, std::size_t w, std::vector<double>& padded) {
    padded.assign((h + 2) * (w + 2), 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        std::copy(in + y * w, in + (y + 1) * w, padded.begin() + static_cast<std::ptrdiff_t>((y + 1) * (w + 2) + 1));
    }
}

} // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> v(a.numel());
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = av[i] + bv[i];
    }
    return make_result("add", a.shape(), std::move(v), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* g = grad_of(self, p)) {
                add_into(self.grad, g);
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> v(a.numel());
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = av[i] - bv[i];
    }
    return make_result("sub", a.shape(), std::move(v), {a, b}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            add_into(self.grad, g);
        }
        if (double* g = grad_of(self, 1)) {
            kernels::axpy(self.grad.size(), -1.0, self.grad.data(), g);
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> v(a.numel());
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = av[i] * bv[i];
    }
    return make_result("mul", a.shape(), std::move(v), {a, b}, [](Node& self) {
        const auto& av = value_of(self, 0);
        const auto& bv = value_of(self, 1);
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * bv[i];
            }
        }
        if (double* g = grad_of(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * av[i];
            }
        }
    });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> v(x.data().begin(), x.data().end());
    for (double& e : v) {
        e *= c;
    }
    return make_result("scale", x.shape(), std::move(v), {x}, [c](Node& self) {
        if (double* g = grad_of(self, 0)) {
            kernels::axpy(self.grad.size(), c, self.grad.data(), g);
        }
    });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) {
        throw DimensionError("mul_scalar: gain must have one element, got " + shape_str(s.shape()));
    }
    const double c = s.item();
    std::vector<double> v(x.data().begin(), x.data().end());
    for (double& e : v) {
        e *= c;
    }
    return make_result("mul_scalar", x.shape(), std::move(v), {x, s}, [](Node& self) {
        const double c = value_of(self, 1)[0];
        if (double* g = grad_of(self, 0)) {
            kernels::axpy(self.grad.size(), c, self.grad.data(), g);
        }
        if (double* g = grad_of(self, 1)) {
            const auto& xv = value_of(self, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                acc += self.grad[i] * xv[i];
            }
            g[0] += acc;
        }
    });
}

namespace {
thread_local ReluMarginProbe* active_probe = nullptr;
thread_local double* active_margin = nullptr;
} // namespace

ReluMarginProbe::ReluMarginProbe()
    : margin_(std::numeric_limits<double>::infinity()), outer_(active_probe) {
    active_probe = this;
    active_margin = &margin_;
}

ReluMarginProbe::~ReluMarginProbe() {
    if (outer_) {
        outer_->margin_ = std::min(outer_->margin_, margin_);
        active_margin = &outer_->margin_;
    } else {
        active_margin = nullptr;
    }
    active_probe = outer_;
}

Tensor relu(const Tensor& x) {
    std::vector<double> v(x.data().begin(), x.data().end());
    if (active_margin) {
        for (double e : v) {
            *active_margin = std::min(*active_margin, std::abs(e));
        }
    }
    for (double& e : v) {
        e = e > 0.0 ? e : 0.0;
    }
    return make_result("relu", x.shape(), std::move(v), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const auto& xv = value_of(self, 0);
            for (std::size_t i = 0; i < xv.size(); ++i) {
                if (xv[i] > 0.0) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor square(const Tensor& x) {
    std::vector<double> v(x.data().begin(), x.data().end());
    for (double& e : v) {
        e *= e;
    }
    return make_result("square", x.shape(), std::move(v), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const auto& xv = value_of(self, 0);
            for (std::size_t i = 0; i < xv.size(); ++i) {
                g[i] += 2.0 * xv[i] * self.grad[i];
            }
        }
    });
}

Tensor add_broadcast(const Tensor& x, const Tensor& y) {
    const Shape& xs = x.shape();
    const Shape& ys = y.shape();
    if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<std::ptrdiff_t>(ys.size()))) {
        throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a trailing shape of " + shape_str(xs));
    }
    const std::size_t inner = y.numel();
    const std::size_t outer = x.numel() / inner;
    std::vector<double> v(x.data().begin(), x.data().end());
    auto yv = y.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            v[o * inner + i] += yv[i];
        }
    }
    return make_result("add_broadcast", xs, std::move(v), {x, y}, [outer, inner](Node& self) {
        if (double* g = grad_of(self, 0)) {
            add_into(self.grad, g);
        }
        if (double* g = grad_of(self, 1)) {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    g[i] += self.grad[o * inner + i];
                }
            }
        }
    });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double e : x.data()) {
        s += e;
    }
    return make_result("sum", {1}, {s}, {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const double d = self.grad[0];
            const std::size_t n = self.parents[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += d;
            }
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_trailing(const Tensor& x, std::size_t count) {
    if (count == 0 || count > x.rank()) {
        throw DimensionError("mean_trailing: cannot reduce " + std::to_string(count) + " axes of " +
                             shape_str(x.shape()));
    }
    Shape out(x.shape().begin(), x.shape().end() - static_cast<std::ptrdiff_t>(count));
    if (out.empty()) {
        out.push_back(1);
    }
    const std::size_t outer = shape_numel(out);
    const std::size_t inner = x.numel() / outer;
    const double inv = 1.0 / static_cast<double>(inner);
    std::vector<double> v(outer, 0.0);
    auto xv = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
            s += xv[o * inner + i];
        }
        v[o] = s * inv;
    }
    return make_result("mean_trailing", std::move(out), std::move(v), {x}, [outer, inner, inv](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t o = 0; o < outer; ++o) {
                const double d = self.grad[o] * inv;
                for (std::size_t i = 0; i < inner; ++i) {
                    g[o * inner + i] += d;
                }
            }
        }
    });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
    if (xs.empty()) {
        throw DimensionError("stack_scalars: empty input");
    }
    std::vector<double> v;
    v.reserve(xs.size());
    for (const Tensor& x : xs) {
        v.push_back(x.item());
    }
    return make_result("stack_scalars", {xs.size()}, std::move(v), xs, [](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (double* g = grad_of(self, p)) {
                g[0] += self.grad[p];
            }
        }
    });
}

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return make_result("reshape", std::move(shape), x.to_vector(), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            add_into(self.grad, g);
        }
    });
}

Tensor transpose_last2(const Tensor& x) {
    require_rank_at_least("transpose_last2", x, 2);
    Shape s = x.shape();
    const std::size_t r = s[s.size() - 2];
    const std::size_t c = s[s.size() - 1];
    const std::size_t batch = x.numel() / (r * c);
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    std::vector<double> v(x.numel());
    for (std::size_t b = 0; b < batch; ++b) {
        transpose_into(x.data().data() + b * r * c, r, c, v.data() + b * r * c);
    }
    return make_result("transpose_last2", std::move(s), std::move(v), {x}, [batch, r, c](Node& self) {
        if (double* g = grad_of(self, 0)) {
            std::vector<double> t(r * c);
            for (std::size_t b = 0; b < batch; ++b) {
                transpose_into(self.grad.data() + b * r * c, c, r, t.data());
                kernels::axpy(r * c, 1.0, t.data(), g + b * r * c);
            }
        }
    });
}

Tensor slice0(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank_at_least("slice0", x, 1);
    if (begin >= end || end > x.dim(0)) {
        throw DimensionError("slice0: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for " + shape_str(x.shape()));
    }
    Shape s = x.shape();
    const std::size_t row = x.numel() / s[0];
    s[0] = end - begin;
    std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * row));
    return make_result("slice0", std::move(s), std::move(v), {x}, [begin, row](Node& self) {
        if (double* g = grad_of(self, 0)) {
            kernels::axpy(self.grad.size(), 1.0, self.grad.data(), g + begin * row);
        }
    });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
    if (xs.empty()) {
        throw DimensionError("concat: empty input");
    }
    const Shape& s0 = xs[0].shape();
    if (axis >= s0.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s0[i];
    }
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s0.size(); ++i) {
        inner *= s0[i];
    }
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Tensor& x : xs) {
        const Shape& s = x.shape();
        if (s.size() != s0.size()) {
            throw DimensionError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        }
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != s0[i]) {
                throw DimensionError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
            }
        }
        widths.push_back(s[axis] * inner);
        total += s[axis];
    }
    Shape out = s0;
    out[axis] = total;
    const std::size_t row = total * inner;
    std::vector<double> v(outer * row);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        auto xv = xs[k].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(xv.begin() + static_cast<std::ptrdiff_t>(o * widths[k]),
                      xv.begin() + static_cast<std::ptrdiff_t>((o + 1) * widths[k]),
                      v.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
        }
        offset += widths[k];
    }
    return make_result("concat", std::move(out), std::move(v), xs, [outer, row, widths](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (double* g = grad_of(self, k)) {
                for (std::size_t o = 0; o < outer; ++o) {
                    kernels::axpy(widths[k], 1.0, self.grad.data() + o * row + offset, g + o * widths[k]);
                }
            }
            offset += widths[k];
        }
    });
}

Tensor to_patch_rows(const Tensor& x) {
    if (x.rank() != 4) {
        throw DimensionError("to_patch_rows: expected [L x C x H x W], got " + shape_str(x.shape()));
    }
    return transpose_last2(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}));
}

Tensor from_patch_rows(const Tensor& rows, std::size_t h, std::size_t w) {
    if (rows.rank() != 3 || rows.dim(1) != h * w) {
        throw DimensionError("from_patch_rows: " + shape_str(rows.shape()) + " is not [L x " + std::to_string(h * w) +
                             " x C]");
    }
    return reshape(transpose_last2(rows), {rows.dim(0), rows.dim(2), h, w});
}

// ---- linear algebra --------------------------------------------------------

namespace {

struct BatchedDims {
    std::size_t batch;
    std::size_t m;
    std::size_t k;
    std::size_t n;
    Shape out;
};

BatchedDims batched_dims(const char* op, const Tensor& a, const Tensor& b, bool b_transposed) {
    if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
        throw DimensionError(std::string(op) + ": expected two rank-2 or two rank-3 tensors, got " +
                             shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t r = a.rank();
    const std::size_t batch = r == 3 ? a.dim(0) : 1;
    if (r == 3 && b.dim(0) != batch) {
        throw DimensionError(std::string(op) + ": batch mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(r - 2);
    const std::size_t k = a.dim(r - 1);
    const std::size_t bk = b_transposed ? b.dim(r - 1) : b.dim(r - 2);
    const std::size_t n = b_transposed ? b.dim(r - 2) : b.dim(r - 1);
    if (k != bk) {
        throw DimensionError(std::string(op) + ": inner extents differ for " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    Shape out = r == 3 ? Shape{batch, m, n} : Shape{m, n};
    return {batch, m, k, n, std::move(out)};
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    BatchedDims d = batched_dims("matmul", a, b, false);
    std::vector<double> v(d.batch * d.m * d.n);
    for (std::size_t i = 0; i < d.batch; ++i) {
        kernels::gemm(d.m, d.n, d.k, a.data().data() + i * d.m * d.k, b.data().data() + i * d.k * d.n,
                      v.data() + i * d.m * d.n);
    }
    const auto [batch, m, k, n, out] = d;
    return make_result("matmul", out, std::move(v), {a, b}, [batch, m, k, n](Node& self) {
        const auto& av = value_of(self, 0);
        const auto& bv = value_of(self, 1);
        std::vector<double> t;
        std::vector<double> prod;
        double* ga = grad_of(self, 0);
        double* gb = grad_of(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
            const double* dc = self.grad.data() + i * m * n;
            if (ga) { // dA = dC * B^T
                t.resize(n * k);
                prod.resize(m * k);
                transpose_into(bv.data() + i * k * n, k, n, t.data());
                kernels::gemm(m, k, n, dc, t.data(), prod.data());
                kernels::axpy(m * k, 1.0, prod.data(), ga + i * m * k);
            }
            if (gb) { // dB = A^T * dC
                t.resize(k * m);
                prod.resize(k * n);
                transpose_into(av.data() + i * m * k, m, k, t.data());
                kernels::gemm(k, n, m, t.data(), dc, prod.data());
                kernels::axpy(k * n, 1.0, prod.data(), gb + i * k * n);
            }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    BatchedDims d = batched_dims("matmul_nt", a, b, true);
    std::vector<double> v(d.batch * d.m * d.n);
    std::vector<double> bt(d.k * d.n);
    for (std::size_t i = 0; i < d.batch; ++i) {
        transpose_into(b.data().data() + i * d.n * d.k, d.n, d.k, bt.data());
        kernels::gemm(d.m, d.n, d.k, a.data().data() + i * d.m * d.k, bt.data(), v.data() + i * d.m * d.n);
    }
    const auto [batch, m, k, n, out] = d;
    return make_result("matmul_nt", out, std::move(v), {a, b}, [batch, m, k, n](Node& self) {
        const auto& av = value_of(self, 0);
        const auto& bv = value_of(self, 1);
        double* ga = grad_of(self, 0);
        double* gb = grad_of(self, 1);
        std::vector<double> t;
        std::vector<double> prod;
        for (std::size_t i = 0; i < batch; ++i) {
            const double* dc = self.grad.data() + i * m * n;
            if (ga) { // dA = dC * B
                prod.resize(m * k);
                kernels::gemm(m, k, n, dc, bv.data() + i * n * k, prod.data());
                kernels::axpy(m * k, 1.0, prod.data(), ga + i * m * k);
            }
            if (gb) { // dB = dC^T * A
                t.resize(n * m);
                prod.resize(n * k);
                transpose_into(dc, m, n, t.data());
                kernels::gemm(n, k, m, t.data(), av.data() + i * m * k, prod.data());
                kernels::axpy(n * k, 1.0, prod.data(), gb + i * n * k);
            }
        }
    });
}

Tensor contract(const Tensor& weight, const Tensor& x, std::size_t axis, bool weight_in_out) {
    if (weight.rank() != 2) {
        throw DimensionError("contract: weight must be rank 2, got " + shape_str(weight.shape()));
    }
    if (axis >= x.rank()) {
        throw DimensionError("contract: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    }
    const std::size_t n_in = weight_in_out ? weight.dim(0) : weight.dim(1);
    const std::size_t n_out = weight_in_out ? weight.dim(1) : weight.dim(0);
    if (x.dim(axis) != n_in) {
        throw DimensionError("contract: weight " + shape_str(weight.shape()) + " does not accept axis " +
                             std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= x.dim(i);
    }
    const std::size_t inner = x.numel() / (outer * n_in);
    // Work with W laid out as [out x in].
    std::vector<double> w(weight.data().begin(), weight.data().end());
    if (weight_in_out) {
        transpose_into(weight.data().data(), n_in, n_out, w.data());
    }
    Shape out = x.shape();
    out[axis] = n_out;
    std::vector<double> v(outer * n_out * inner);
    for (std::size_t a = 0; a < outer; ++a) {
        kernels::gemm(n_out, inner, n_in, w.data(), x.data().data() + a * n_in * inner, v.data() + a * n_out * inner);
    }
    return make_result("contract", std::move(out), std::move(v), {weight, x},
                       [outer, inner, n_in, n_out, weight_in_out, w = std::move(w)](Node& self) {
                           const auto& xv = value_of(self, 1);
                           double* gw = grad_of(self, 0);
                           double* gx = grad_of(self, 1);
                           std::vector<double> wt;
                           if (gx) {
                               wt.resize(n_in * n_out);
                               transpose_into(w.data(), n_out, n_in, wt.data());
                           }
                           std::vector<double> dw(gw ? n_out * n_in : 0, 0.0);
                           std::vector<double> xt(inner * n_in);
                           std::vector<double> prod;
                           for (std::size_t a = 0; a < outer; ++a) {
                               const double* dy = self.grad.data() + a * n_out * inner;
                               if (gw) { // dW += dY * X^T
                                   transpose_into(xv.data() + a * n_in * inner, n_in, inner, xt.data());
                                   prod.resize(n_out * n_in);
                                   kernels::gemm(n_out, n_in, inner, dy, xt.data(), prod.data());
                                   kernels::axpy(n_out * n_in, 1.0, prod.data(), dw.data());
                               }
                               if (gx) { // dX = W^T * dY
                                   prod.resize(n_in * inner);
                                   kernels::gemm(n_in, inner, n_out, wt.data(), dy, prod.data());
                                   kernels::axpy(n_in * inner, 1.0, prod.data(), gx + a * n_in * inner);
                               }
                           }
                           if (gw) {
                               if (weight_in_out) {
                                   std::vector<double> t(n_in * n_out);
                                   transpose_into(dw.data(), n_out, n_in, t.data());
                                   kernels::axpy(t.size(), 1.0, t.data(), gw);
                               } else {
                                   kernels::axpy(dw.size(), 1.0, dw.data(), gw);
                               }
                           }
                       });
}

Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis) {
    if (axis >= x.rank() || bias.numel() != x.dim(axis)) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit axis " +
                             std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= x.dim(i);
    }
    const std::size_t n = x.dim(axis);
    const std::size_t inner = x.numel() / (outer * n);
    std::vector<double> v(x.data().begin(), x.data().end());
    auto bv = bias.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t c = 0; c < n; ++c) {
            double* row = v.data() + (o * n + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                row[i] += bv[c];
            }
        }
    }
    return make_result("add_bias", x.shape(), std::move(v), {x, bias}, [outer, n, inner](Node& self) {
        if (double* g = grad_of(self, 0)) {
            add_into(self.grad, g);
        }
        if (double* g = grad_of(self, 1)) {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t c = 0; c < n; ++c) {
                    const double* row = self.grad.data() + (o * n + c) * inner;
                    double s = 0.0;
                    for (std::size_t i = 0; i < inner; ++i) {
                        s += row[i];
                    }
                    g[c] += s;
                }
            }
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_rank_at_least("softmax_rows", x, 1);
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::vector<double> v(x.numel());
    auto xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* out = v.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            s += out[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] *= inv;
        }
    }
    return make_result("softmax_rows", x.shape(), std::move(v), {x}, [rows, n](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * n;
                const double* dy = self.grad.data() + r * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    dot += dy[j] * y[j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    g[r * n + j] += y[j] * (dy[j] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, std::size_t axis, double eps) {
    if (axis >= x.rank()) {
        throw DimensionError("layer_norm: axis out of range for " + shape_str(x.shape()));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= x.dim(i);
    }
    const std::size_t n = x.dim(axis);
    const std::size_t inner = x.numel() / (outer * n);
    std::vector<double> v(x.numel());
    std::vector<double> inv_std(outer * inner);
    auto xv = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            double mu = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                mu += xv[base + c * inner];
            }
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                const double d = xv[base + c * inner] - mu;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * inner + i] = is;
            for (std::size_t c = 0; c < n; ++c) {
                v[base + c * inner] = (xv[base + c * inner] - mu) * is;
            }
        }
    }
    return make_result("layer_norm", x.shape(), std::move(v), {x},
                       [outer, n, inner, inv_std = std::move(inv_std)](Node& self) {
                           double* g = grad_of(self, 0);
                           if (!g) {
                               return;
                           }
                           const double fn = static_cast<double>(n);
                           for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t i = 0; i < inner; ++i) {
                                   const std::size_t base = o * n * inner + i;
                                   double mdy = 0.0;
                                   double mdyx = 0.0;
                                   for (std::size_t c = 0; c < n; ++c) {
                                       const double dy = self.grad[base + c * inner];
                                       mdy += dy;
                                       mdyx += dy * self.value[base + c * inner];
                                   }
                                   mdy /= fn;
                                   mdyx /= fn;
                                   const double is = inv_std[o * inner + i];
                                   for (std::size_t c = 0; c < n; ++c) {
                                       const std::size_t at = base + c * inner;
                                       g[at] += is * (self.grad[at] - mdy - self.value[at] * mdyx);
                                   }
                               }
                           }
                       });
}

// ---- convolutions and resampling ------------------------------------------

Tensor depthwise_conv2d(const Tensor& x, const Tensor& k) {
    const SpatialView sv = spatial_view("depthwise_conv2d", x);
    if (k.shape() != Shape{sv.channels, 3, 3}) {
        throw DimensionError("depthwise_conv2d: kernel " + shape_str(k.shape()) + " does not match " +
                             std::to_string(sv.channels) + " channels of " + shape_str(x.shape()));
    }
    const std::size_t plane = sv.h * sv.w;
    std::vector<double> v(x.numel());
    std::vector<double> padded;
    for (std::size_t b = 0; b < sv.batch; ++b) {
        for (std::size_t c = 0; c < sv.channels; ++c) {
            const std::size_t off = (b * sv.channels + c) * plane;
            pad_plane(x.data().data() + off, sv.h, sv.w, padded);
            kernels::dwconv3x3(sv.h, sv.w, padded.data(), k.data().data() + c * 9, v.data() + off);
        }
    }
    return make_result("depthwise_conv2d", x.shape(), std::move(v), {x, k}, [sv, plane](Node& self) {
        const auto& xv = value_of(self, 0);
        const auto& kv = value_of(self, 1);
        double* gx = grad_of(self, 0);
        double* gk = grad_of(self, 1);
        std::vector<double> padded;
        std::vector<double> tmp(plane);
        const std::size_t pw = sv.w + 2;
        for (std::size_t b = 0; b < sv.batch; ++b) {
            for (std::size_t c = 0; c < sv.channels; ++c) {
                const std::size_t off = (b * sv.channels + c) * plane;
                const double* dy = self.grad.data() + off;
                if (gx) { // correlate the padded upstream gradient with the flipped kernel
                    double flipped[9];
                    for (std::size_t t = 0; t < 9; ++t) {
                        flipped[t] = kv[c * 9 + 8 - t];
                    }
                    pad_plane(dy, sv.h, sv.w, padded);
                    kernels::dwconv3x3(sv.h, sv.w, padded.data(), flipped, tmp.data());
                    kernels::axpy(plane, 1.0, tmp.data(), gx + off);
                }
                if (gk) {
                    pad_plane(xv.data() + off, sv.h, sv.w, padded);
                    for (std::size_t t = 0; t < 9; ++t) {
                        const std::size_t ty = t / 3;
                        const std::size_t tx = t % 3;
                        double s = 0.0;
                        for (std::size_t y = 0; y < sv.h; ++y) {
                            for (std::size_t x = 0; x < sv.w; ++x) {
                                s += dy[y * sv.w + x] * padded[(y + ty) * pw + x + tx];
                            }
                        }
                        gk[c * 9 + t] += s;
                    }
                }
            }
        }
    });
}

Tensor depthwise_conv3d_t311(const Tensor& x, const Tensor& k) {
    if (x.rank() != 4) {
        throw DimensionError("depthwise_conv3d_t311: expected [L x D x H x W], got " + shape_str(x.shape()));
    }
    const std::size_t frames = x.dim(0);
    const std::size_t d = x.dim(1);
    if (k.shape() != Shape{d, 3}) {
        throw DimensionError("depthwise_conv3d_t311: kernel " + shape_str(k.shape()) + " does not match " +
                             std::to_string(d) + " channels of " + shape_str(x.shape()));
    }
    const std::size_t plane = x.dim(2) * x.dim(3);
    const std::size_t frame = d * plane;
    std::vector<double> v(x.numel());
    auto xv = x.data();
    auto kv = k.data();
    for (std::size_t l = 0; l < frames; ++l) {
        for (std::size_t c = 0; c < d; ++c) {
            const double k0 = kv[c * 3];
            const double k1 = kv[c * 3 + 1];
            const double k2 = kv[c * 3 + 2];
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t at = l * frame + c * plane + p;
                const double prev = l > 0 ? xv[at - frame] : 0.0;
                const double next = l + 1 < frames ? xv[at + frame] : 0.0;
                double s = 0.0;
                s += k0 * prev;
                s += k1 * xv[at];
                s += k2 * next;
                v[at] = s;
            }
        }
    }
    return make_result("depthwise_conv3d_t311", x.shape(), std::move(v), {x, k},
                       [frames, d, plane, frame](Node& self) {
                           const auto& xv = value_of(self, 0);
                           const auto& kv = value_of(self, 1);
                           double* gx = grad_of(self, 0);
                           double* gk = grad_of(self, 1);
                           for (std::size_t l = 0; l < frames; ++l) {
                               for (std::size_t c = 0; c < d; ++c) {
                                   for (std::size_t p = 0; p < plane; ++p) {
                                       const std::size_t at = l * frame + c * plane + p;
                                       const double dy = self.grad[at];
                                       if (gx) {
                                           if (l > 0) {
                                               gx[at - frame] += kv[c * 3] * dy;
                                           }
                                           gx[at] += kv[c * 3 + 1] * dy;
                                           if (l + 1 < frames) {
                                               gx[at + frame] += kv[c * 3 + 2] * dy;
                                           }
                                       }
                                       if (gk) {
                                           if (l > 0) {
                                               gk[c * 3] += dy * xv[at - frame];
                                           }
                                           gk[c * 3 + 1] += dy * xv[at];
                                           if (l + 1 < frames) {
                                               gk[c * 3 + 2] += dy * xv[at + frame];
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

namespace {

// cols[(ci*9 + t) x (h*w)] for one image.
void im2col3x3(const double* img, std::size_t cin, std::size_t h, std::size_t w, double* cols) {
    const std::size_t plane = h * w;
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t t = 0; t < 9; ++t) {
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(t / 3) - 1;
            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(t % 3) - 1;
            double* row = cols + (c * 9 + t) * plane;
            for (std::size_t y = 0; y < h; ++y) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
                for (std::size_t x = 0; x < w; ++x) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + ox;
                    const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                        sx < static_cast<std::ptrdiff_t>(w);
                    row[y * w + x] = inside ? img[c * plane + static_cast<std::size_t>(sy) * w +
                                                  static_cast<std::size_t>(sx)]
                                            : 0.0;
                }
            }
        }
    }
}

void col2im3x3(const double* cols, std::size_t cin, std::size_t h, std::size_t w, double* img) {
    const std::size_t plane = h * w;
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t t = 0; t < 9; ++t) {
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(t / 3) - 1;
            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(t % 3) - 1;
            const double* row = cols + (c * 9 + t) * plane;
            for (std::size_t y = 0; y < h; ++y) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                    continue;
                }
                for (std::size_t x = 0; x < w; ++x) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + ox;
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                    }
                    img[c * plane + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] +=
                        row[y * w + x];
                }
            }
        }
    }
}

} // namespace

Tensor conv2d_3x3(const Tensor& x, const Tensor& k, const Tensor& bias) {
    const SpatialView sv = spatial_view("conv2d_3x3", x);
    if (k.rank() != 4 || k.dim(1) != sv.channels || k.dim(2) != 3 || k.dim(3) != 3) {
        throw DimensionError("conv2d_3x3: kernel " + shape_str(k.shape()) + " does not accept input " +
                             shape_str(x.shape()));
    }
    const std::size_t cout = k.dim(0);
    const std::size_t cin = sv.channels;
    const std::size_t plane = sv.h * sv.w;
    Shape out = x.shape();
    out[out.size() - 3] = cout;
    std::vector<double> v(sv.batch * cout * plane);
    std::vector<double> cols(cin * 9 * plane);
    for (std::size_t b = 0; b < sv.batch; ++b) {
        im2col3x3(x.data().data() + b * cin * plane, cin, sv.h, sv.w, cols.data());
        kernels::gemm(cout, plane, cin * 9, k.data().data(), cols.data(), v.data() + b * cout * plane);
    }
    Tensor conv = make_result("conv2d_3x3", std::move(out), std::move(v), {x, k}, [sv, cout, cin, plane](Node& self) {
        const auto& xv = value_of(self, 0);
        const auto& kv = value_of(self, 1);
        double* gx = grad_of(self, 0);
        double* gk = grad_of(self, 1);
        const std::size_t kk = cin * 9;
        std::vector<double> cols(kk * plane);
        std::vector<double> colst(plane * kk);
        std::vector<double> prod;
        std::vector<double> kt;
        if (gx) {
            kt.resize(kk * cout);
            transpose_into(kv.data(), cout, kk, kt.data());
        }
        for (std::size_t b = 0; b < sv.batch; ++b) {
            const double* dy = self.grad.data() + b * cout * plane;
            if (gk) { // dK += dY * cols^T
                im2col3x3(xv.data() + b * cin * plane, cin, sv.h, sv.w, cols.data());
                transpose_into(cols.data(), kk, plane, colst.data());
                prod.resize(cout * kk);
                kernels::gemm(cout, kk, plane, dy, colst.data(), prod.data());
                kernels::axpy(cout * kk, 1.0, prod.data(), gk);
            }
            if (gx) { // dcols = K^T * dY, scattered back
                prod.resize(kk * plane);
                kernels::gemm(kk, plane, cout, kt.data(), dy, prod.data());
                col2im3x3(prod.data(), cin, sv.h, sv.w, gx + b * cin * plane);
            }
        }
    });
    if (!bias.defined()) {
        return conv;
    }
    return add_bias(conv, bias, conv.rank() - 3);
}

Tensor conv1x1(const Tensor& x, const Tensor& k, const Tensor& bias) {
    const SpatialView sv = spatial_view("conv1x1", x);
    if (k.rank() != 2 || k.dim(1) != sv.channels) {
        throw DimensionError("conv1x1: kernel " + shape_str(k.shape()) + " does not accept input " +
                             shape_str(x.shape()));
    }
    Tensor y = contract(k, x, x.rank() - 3);
    if (!bias.defined()) {
        return y;
    }
    return add_bias(y, bias, y.rank() - 3);
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
    const SpatialView sv = spatial_view("channel_scale", x);
    if (s.numel() != sv.channels) {
        throw DimensionError("channel_scale: gains " + shape_str(s.shape()) + " do not match " +
                             shape_str(x.shape()));
    }
    const std::size_t plane = sv.h * sv.w;
    std::vector<double> v(x.data().begin(), x.data().end());
    auto sv_ = s.data();
    for (std::size_t b = 0; b < sv.batch; ++b) {
        for (std::size_t c = 0; c < sv.channels; ++c) {
            double* p = v.data() + (b * sv.channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                p[i] *= sv_[c];
            }
        }
    }
    return make_result("channel_scale", x.shape(), std::move(v), {x, s}, [sv, plane](Node& self) {
        const auto& xv = value_of(self, 0);
        const auto& gains = value_of(self, 1);
        double* gx = grad_of(self, 0);
        double* gs = grad_of(self, 1);
        for (std::size_t b = 0; b < sv.batch; ++b) {
            for (std::size_t c = 0; c < sv.channels; ++c) {
                const std::size_t off = (b * sv.channels + c) * plane;
                if (gx) {
                    kernels::axpy(plane, gains[c], self.grad.data() + off, gx + off);
                }
                if (gs) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        acc += self.grad[off + i] * xv[off + i];
                    }
                    gs[c] += acc;
                }
            }
        }
    });
}

Tensor avgpool2x2(const Tensor& x) {
    const SpatialView sv = spatial_view("avgpool2x2", x);
    const std::size_t oh = (sv.h + 1) / 2;
    const std::size_t ow = (sv.w + 1) / 2;
    const std::size_t planes = sv.batch * sv.channels;
    Shape out = x.shape();
    out[out.size() - 2] = oh;
    out[out.size() - 1] = ow;
    std::vector<double> v(planes * oh * ow);
    auto xv = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const double* in = xv.data() + p * sv.h * sv.w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0.0;
                std::size_t count = 0;
                for (std::size_t y = 2 * i; y < std::min(2 * i + 2, sv.h); ++y) {
                    for (std::size_t xx = 2 * j; xx < std::min(2 * j + 2, sv.w); ++xx) {
                        s += in[y * sv.w + xx];
                        ++count;
                    }
                }
                v[(p * oh + i) * ow + j] = s / static_cast<double>(count);
            }
        }
    }
    return make_result("avgpool2x2", std::move(out), std::move(v), {x}, [sv, planes, oh, ow](Node& self) {
        double* g = grad_of(self, 0);
        if (!g) {
            return;
        }
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t i = 0; i < oh; ++i) {
                for (std::size_t j = 0; j < ow; ++j) {
                    const std::size_t y1 = std::min(2 * i + 2, sv.h);
                    const std::size_t x1 = std::min(2 * j + 2, sv.w);
                    const double d = self.grad[(p * oh + i) * ow + j] /
                                     static_cast<double>((y1 - 2 * i) * (x1 - 2 * j));
                    for (std::size_t y = 2 * i; y < y1; ++y) {
                        for (std::size_t xx = 2 * j; xx < x1; ++xx) {
                            g[p * sv.h * sv.w + y * sv.w + xx] += d;
                        }
                    }
                }
            }
        }
    });
}

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

// align_corners = false source coordinate for each output index.
std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        src = std::max(src, 0.0);
        std::size_t lo = static_cast<std::size_t>(std::floor(src));
        lo = std::min(lo, in - 1);
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[o] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

} // namespace

Tensor bilinear_upsample2x(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    const SpatialView sv = spatial_view("bilinear_upsample2x", x);
    if (out_h == 0 || out_w == 0) {
        throw DimensionError("bilinear_upsample2x: target extent must be positive");
    }
    const auto ty = bilinear_taps(sv.h, out_h);
    const auto tx = bilinear_taps(sv.w, out_w);
    const std::size_t planes = sv.batch * sv.channels;
    Shape out = x.shape();
    out[out.size() - 2] = out_h;
    out[out.size() - 1] = out_w;
    std::vector<double> v(planes * out_h * out_w);
    auto xv = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const double* in = xv.data() + p * sv.h * sv.w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const Tap& a = ty[i];
            for (std::size_t j = 0; j < out_w; ++j) {
                const Tap& b = tx[j];
                // lerp form keeps constant fields exact
                const double v00 = in[a.lo * sv.w + b.lo];
                const double v01 = in[a.lo * sv.w + b.hi];
                const double v10 = in[a.hi * sv.w + b.lo];
                const double v11 = in[a.hi * sv.w + b.hi];
                const double top = v00 + b.frac * (v01 - v00);
                const double bottom = v10 + b.frac * (v11 - v10);
                v[(p * out_h + i) * out_w + j] = top + a.frac * (bottom - top);
            }
        }
    }
    return make_result("bilinear_upsample2x", std::move(out), std::move(v), {x},
                       [sv, planes, out_h, out_w, ty, tx](Node& self) {
                           double* g = grad_of(self, 0);
                           if (!g) {
                               return;
                           }
                           for (std::size_t p = 0; p < planes; ++p) {
                               double* gp = g + p * sv.h * sv.w;
                               for (std::size_t i = 0; i < out_h; ++i) {
                                   const Tap& a = ty[i];
                                   for (std::size_t j = 0; j < out_w; ++j) {
                                       const Tap& b = tx[j];
                                       const double d = self.grad[(p * out_h + i) * out_w + j];
                                       gp[a.lo * sv.w + b.lo] += d * (1.0 - a.frac) * (1.0 - b.frac);
                                       gp[a.lo * sv.w + b.hi] += d * (1.0 - a.frac) * b.frac;
                                       gp[a.hi * sv.w + b.lo] += d * a.frac * (1.0 - b.frac);
                                       gp[a.hi * sv.w + b.hi] += d * a.frac * b.frac;
                                   }
                               }
                           }
                       });
}

Tensor patchify(const Tensor& x, std::size_t patch) {
    const SpatialView sv = spatial_view("patchify", x);
    if (patch == 0 || sv.h % patch != 0 || sv.w % patch != 0) {
        throw DimensionError("patchify: patch " + std::to_string(patch) + " does not tile " + shape_str(x.shape()));
    }
    const std::size_t gh = sv.h / patch;
    const std::size_t gw = sv.w / patch;
    const std::size_t cout = sv.channels * patch * patch;
    Shape out = x.shape();
    out[out.size() - 3] = cout;
    out[out.size() - 2] = gh;
    out[out.size() - 1] = gw;
    // index map: output position -> input position
    std::vector<std::size_t> map(sv.batch * cout * gh * gw);
    for (std::size_t b = 0; b < sv.batch; ++b) {
        for (std::size_t c = 0; c < sv.channels; ++c) {
            for (std::size_t py = 0; py < patch; ++py) {
                for (std::size_t px = 0; px < patch; ++px) {
                    const std::size_t oc = (c * patch + py) * patch + px;
                    for (std::size_t i = 0; i < gh; ++i) {
                        for (std::size_t j = 0; j < gw; ++j) {
                            map[((b * cout + oc) * gh + i) * gw + j] =
                                ((b * sv.channels + c) * sv.h + i * patch + py) * sv.w + j * patch + px;
                        }
                    }
                }
            }
        }
    }
    std::vector<double> v(map.size());
    auto xv = x.data();
    for (std::size_t i = 0; i < map.size(); ++i) {
        v[i] = xv[map[i]];
    }
    return make_result("patchify", std::move(out), std::move(v), {x}, [map = std::move(map)](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < map.size(); ++i) {
                g[map[i]] += self.grad[i];
            }
        }
    });
}

// ---- losses and metrics ----------------------------------------------------

Tensor bimhm_distance(const Tensor& q, const Tensor& s) {
    if (q.rank() != 2 || s.rank() != 2 || q.dim(1) != s.dim(1)) {
        throw UsageError("bimhm_distance: expected [Lq x D] and [Ls x D], got " + shape_str(q.shape()) + " and " +
                         shape_str(s.shape()));
    }
    const std::size_t lq = q.dim(0);
    const std::size_t ls = s.dim(0);
    const std::size_t d = q.dim(1);
    auto qv = q.data();
    auto sv = s.data();
    std::vector<double> dist(lq * ls);
    for (std::size_t i = 0; i < lq; ++i) {
        for (std::size_t j = 0; j < ls; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = qv[i * d + c] - sv[j * d + c];
                acc += diff * diff;
            }
            dist[i * ls + j] = acc;
        }
    }
    // Ties resolve to the lowest index.
    std::vector<std::size_t> row_arg(lq);
    std::vector<std::size_t> col_arg(ls);
    double row_term = 0.0;
    for (std::size_t i = 0; i < lq; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < ls; ++j) {
            if (dist[i * ls + j] < dist[i * ls + best]) {
                best = j;
            }
        }
        row_arg[i] = best;
        row_term += dist[i * ls + best];
    }
    double col_term = 0.0;
    for (std::size_t j = 0; j < ls; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < lq; ++i) {
            if (dist[i * ls + j] < dist[best * ls + j]) {
                best = i;
            }
        }
        col_arg[j] = best;
        col_term += dist[best * ls + j];
    }
    const double value = row_term / static_cast<double>(lq) + col_term / static_cast<double>(ls);
    return make_result("bimhm_distance", {1}, {value}, {q, s},
                       [lq, ls, d, row_arg = std::move(row_arg), col_arg = std::move(col_arg)](Node& self) {
                           const auto& qv = value_of(self, 0);
                           const auto& sv = value_of(self, 1);
                           double* gq = grad_of(self, 0);
                           double* gs = grad_of(self, 1);
                           const double up = self.grad[0];
                           auto pair = [&](std::size_t i, std::size_t j, double w) {
                               for (std::size_t c = 0; c < d; ++c) {
                                   const double diff = 2.0 * w * (qv[i * d + c] - sv[j * d + c]);
                                   if (gq) {
                                       gq[i * d + c] += diff;
                                   }
                                   if (gs) {
                                       gs[j * d + c] -= diff;
                                   }
                               }
                           };
                           for (std::size_t i = 0; i < lq; ++i) {
                               pair(i, row_arg[i], up / static_cast<double>(lq));
                           }
                           for (std::size_t j = 0; j < ls; ++j) {
                               pair(col_arg[j], j, up / static_cast<double>(ls));
                           }
                       });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t rows = logits.dim(0);
    const std::size_t n = logits.dim(1);
    for (std::size_t y : labels) {
        if (y >= n) {
            throw UsageError("cross_entropy: label " + std::to_string(y) + " out of range");
        }
    }
    auto lv = logits.data();
    std::vector<double> probs(rows * n);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* z = lv.data() + r * n;
        const double mx = *std::max_element(z, z + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            probs[r * n + j] = std::exp(z[j] - mx);
            s += probs[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            probs[r * n + j] /= s;
        }
        loss += (mx + std::log(s)) - z[labels[r]];
    }
    loss /= static_cast<double>(rows);
    return make_result("cross_entropy", {1}, {loss}, {logits},
                       [rows, n, labels, probs = std::move(probs)](Node& self) {
                           double* g = grad_of(self, 0);
                           if (!g) {
                               return;
                           }
                           const double up = self.grad[0] / static_cast<double>(rows);
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t j = 0; j < n; ++j) {
                                   const double target = j == labels[r] ? 1.0 : 0.0;
                                   g[r * n + j] += up * (probs[r * n + j] - target);
                               }
                           }
                       });
}

} // namespace mga::ops
