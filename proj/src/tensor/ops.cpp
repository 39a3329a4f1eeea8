#include "sattag/ops.hpp"

#include "sattag/errors.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sattag {

namespace {

using StoragePtr = std::shared_ptr<TensorStorage>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void record(std::vector<StoragePtr> inputs, const Tensor& out, Tape::BackwardFn fn) {
    Tape::active()->record(std::move(inputs), out.storage(), std::move(fn));
}

// Splits a shape around `axis` into (outer, extent, inner) products.
struct AxisView {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

void require_axis(const Tensor& x, std::size_t axis, const char* op) {
    if (axis >= x.rank()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                             to_string(x.shape()));
    }
}

blasint blas_int(std::size_t v) {
    if (v > static_cast<std::size_t>(std::numeric_limits<blasint>::max())) {
        throw DimensionError("matrix extent " + std::to_string(v) + " exceeds the BLAS index range");
    }
    return static_cast<blasint>(v);
}

// 2-D kernels on raw pointers, all rows contiguous, accumulating into c.

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, blas_int(m), blas_int(n), blas_int(k), 1.0, a,
                blas_int(k), b, blas_int(n), 1.0, c, blas_int(n));
}

// c[m×k] += a[m×n] · b[k×n]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, blas_int(m), blas_int(k), blas_int(n), 1.0, a,
                blas_int(n), b, blas_int(n), 1.0, c, blas_int(k));
}

// c[k×n] += a[m×k]^T · b[m×n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, blas_int(k), blas_int(n), blas_int(m), 1.0, a,
                blas_int(k), b, blas_int(n), 1.0, c, blas_int(n));
}

bool is_suffix(const Shape& full, const Shape& suffix) {
    if (suffix.size() > full.size()) return false;
    return std::equal(suffix.begin(), suffix.end(), full.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    std::size_t batch = 1;
    std::size_t m = 0;
    std::size_t k = 0;
    std::size_t n = 0;
    Shape out_shape;
    if (a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0)) {
        m = a.dim(0);
        k = a.dim(1);
        n = b.dim(1);
        out_shape = {m, n};
    } else if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1)) {
        batch = a.dim(0);
        m = a.dim(1);
        k = a.dim(2);
        n = b.dim(2);
        out_shape = {batch, m, n};
    } else {
        throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    }
    Tensor out(out_shape);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
        gemm_nn_acc(ad + s * m * k, bd + s * k * n, od + s * m * n, m, k, n);
    }
    if (should_record({&a, &b})) {
        StoragePtr sa = a.storage(), sb = b.storage(), so = out.storage();
        record({sa, sb}, out, [sa, sb, so, batch, m, k, n] {
            const double* g = so->grad.data();
            if (sa->requires_grad) {
                double* ga = sa->ensure_grad().data();
                for (std::size_t s = 0; s < batch; ++s)
                    gemm_nt_acc(g + s * m * n, sb->data.data() + s * k * n, ga + s * m * k, m, n, k);
            }
            if (sb->requires_grad) {
                double* gb = sb->ensure_grad().data();
                for (std::size_t s = 0; s < batch; ++s)
                    gemm_tn_acc(sa->data.data() + s * m * k, g + s * m * n, gb + s * k * n, m, k, n);
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so] {
            auto& gx = sx->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i];
        });
    }
    return out;
}

Tensor permute(const Tensor& x, std::span<const std::size_t> order) {
    const std::size_t r = x.rank();
    if (order.size() != r) throw DimensionError("permute: order length does not match rank");
    std::vector<bool> seen(r, false);
    for (std::size_t ax : order) {
        if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axis order");
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(order[i]);
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    // Source offset for each output element, walked with an odometer.
    std::vector<std::size_t> src(x.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[order[i]];
        src[flat] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    Tensor out(out_shape);
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < src.size(); ++i) od[i] = xd[src[i]];
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, src = std::move(src)] {
            auto& gx = sx->ensure_grad();
            for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += so->grad[i];
        });
    }
    return out;
}

Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2");
    std::vector<std::size_t> order(x.rank());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::swap(order[x.rank() - 1], order[x.rank() - 2]);
    return permute(x, order);
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!is_suffix(a.shape(), b.shape())) {
        throw DimensionError("add: shape " + to_string(b.shape()) + " does not broadcast onto " +
                             to_string(a.shape()));
    }
    const std::size_t nb = b.size();
    Tensor out(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i % nb];
    if (should_record({&a, &b})) {
        StoragePtr sa = a.storage(), sb = b.storage(), so = out.storage();
        record({sa, sb}, out, [sa, sb, so, nb] {
            const auto& g = so->grad;
            if (sa->requires_grad) {
                auto& ga = sa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (sb->requires_grad) {
                auto& gb = sb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Tensor out(a.shape());
    auto od = out.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    if (should_record({&a, &b})) {
        StoragePtr sa = a.storage(), sb = b.storage(), so = out.storage();
        record({sa, sb}, out, [sa, sb, so] {
            const auto& g = so->grad;
            if (sa->requires_grad) {
                auto& ga = sa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sb->data[i];
            }
            if (sb->requires_grad) {
                auto& gb = sb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * sa->data[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double factor) {
    Tensor out(x.shape());
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * factor;
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, factor] {
            auto& gx = sx->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i] * factor;
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    Tensor out = Tensor::scalar(total);
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so] {
            auto& gx = sx->ensure_grad();
            const double g = so->grad[0];
            for (double& v : gx) v += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Tensor& first = parts.front();
    require_axis(first, axis, "concat");
    Shape out_shape = first.shape();
    out_shape[axis] = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < p.rank(); ++i) {
            if (i != axis && p.dim(i) != first.dim(i)) {
                throw DimensionError("concat: shape " + to_string(p.shape()) + " incompatible with " +
                                     to_string(first.shape()) + " along axis " + std::to_string(axis));
            }
        }
        out_shape[axis] += p.dim(axis);
    }
    const AxisView ov = axis_view(out_shape, axis);
    Tensor out(out_shape);
    auto od = out.data();
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(offset);
        const std::size_t block = p.dim(axis) * ov.inner;
        auto pd = p.data();
        for (std::size_t o = 0; o < ov.outer; ++o) {
            std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        od.begin() + static_cast<std::ptrdiff_t>(o * ov.extent * ov.inner + offset * ov.inner));
        }
        offset += p.dim(axis);
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || should_record({&p});
    if (any) {
        std::vector<StoragePtr> inputs;
        for (const Tensor& p : parts) inputs.push_back(p.storage());
        StoragePtr so = out.storage();
        record(inputs, out, [inputs, so, offsets, ov] {
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                const auto& sp = inputs[k];
                if (!sp->requires_grad) continue;
                auto& gp = sp->ensure_grad();
                const std::size_t len = gp.size() / ov.outer;
                for (std::size_t o = 0; o < ov.outer; ++o) {
                    const double* src = so->grad.data() + o * ov.extent * ov.inner + offsets[k] * ov.inner;
                    double* dst = gp.data() + o * len;
                    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t length) {
    require_axis(x, axis, "slice");
    if (length == 0 || begin + length > x.dim(axis)) {
        throw DimensionError("slice: [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                             ") out of bounds for extent " + std::to_string(x.dim(axis)));
    }
    const AxisView v = axis_view(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    Tensor out(out_shape);
    auto od = out.data();
    auto xd = x.data();
    const std::size_t block = length * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o) {
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(o * v.extent * v.inner + begin * v.inner), block,
                    od.begin() + static_cast<std::ptrdiff_t>(o * block));
    }
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, v, begin, block] {
            auto& gx = sx->ensure_grad();
            for (std::size_t o = 0; o < v.outer; ++o) {
                double* dst = gx.data() + o * v.extent * v.inner + begin * v.inner;
                const double* src = so->grad.data() + o * block;
                for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor repeat_leading(const Tensor& x, std::size_t count) {
    if (count == 0) throw DimensionError("repeat_leading: count must be positive");
    Shape out_shape{count};
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    Tensor out(out_shape);
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t c = 0; c < count; ++c)
        std::copy(xd.begin(), xd.end(), od.begin() + static_cast<std::ptrdiff_t>(c * xd.size()));
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so] {
            auto& gx = sx->ensure_grad();
            const std::size_t n = gx.size();
            for (std::size_t i = 0; i < so->grad.size(); ++i) gx[i % n] += so->grad[i];
        });
    }
    return out;
}

namespace {

// Range of output positions o with 0 <= o*stride + k - pad < extent.
std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t in_extent, std::size_t stride,
                                                std::size_t k, std::size_t pad) {
    std::size_t lo = 0;
    if (pad > k) lo = (pad - k + stride - 1) / stride;
    // o*stride + k - pad <= in_extent - 1  =>  o <= (in_extent - 1 + pad - k) / stride
    if (in_extent + pad < k + 1) return {0, 0};
    const std::size_t hi = std::min(out_extent, (in_extent - 1 + pad - k) / stride + 1);
    if (lo >= hi) return {0, 0};
    return {lo, hi};
}

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
        throw DimensionError(std::string(op) + ": bias shape " + to_string(bias.shape()) + " does not match " +
                             std::to_string(channels) + " output channels");
    }
}

}  // namespace

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv1dOptions opts) {
    if (input.rank() != 3 || weight.rank() != 3 || input.dim(1) != weight.dim(1)) {
        throw DimensionError("conv1d: input " + to_string(input.shape()) + " incompatible with weight " +
                             to_string(weight.shape()));
    }
    if (opts.stride == 0) throw ContractError("conv1d: stride must be >= 1");
    const std::size_t nb = input.dim(0), cin = input.dim(1), len = input.dim(2);
    const std::size_t cout = weight.dim(0), k = weight.dim(2);
    if (k > len + 2 * opts.padding) {
        throw DimensionError("conv1d: kernel " + std::to_string(k) + " exceeds padded input length " +
                             std::to_string(len + 2 * opts.padding));
    }
    check_bias(bias, cout, "conv1d");
    const std::size_t stride = opts.stride, pad = opts.padding;
    const std::size_t lout = (len + 2 * pad - k) / stride + 1;
    Tensor out(Shape{nb, cout, lout});
    const double* x = input.data().data();
    const double* w = weight.data().data();
    double* y = out.data().data();
    std::vector<std::pair<std::size_t, std::size_t>> ranges(k);
    for (std::size_t kk = 0; kk < k; ++kk) ranges[kk] = valid_range(lout, len, stride, kk, pad);
    const std::size_t rows = cin * k;
    // col[(ci·k + kk) × lout] holds the input sample each output position sees
    // through tap kk of channel ci; out-of-range taps stay zero.
    const auto im2col = [=](const double* xb, double* col) {
        std::fill_n(col, rows * lout, 0.0);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xrow = xb + ci * len;
            for (std::size_t kk = 0; kk < k; ++kk) {
                double* crow = col + (ci * k + kk) * lout;
                const auto [lo, hi] = ranges[kk];
                for (std::size_t o = lo; o < hi; ++o) crow[o] = xrow[o * stride + kk - pad];
            }
        }
    };
    std::vector<double> col(rows * lout);
    for (std::size_t b = 0; b < nb; ++b) {
        double* yb = y + b * cout * lout;
        if (bias.defined()) {
            for (std::size_t co = 0; co < cout; ++co) std::fill_n(yb + co * lout, lout, bias.data()[co]);
        }
        im2col(x + b * cin * len, col.data());
        gemm_nn_acc(w, col.data(), yb, cout, rows, lout);
    }
    if (should_record({&input, &weight, &bias})) {
        StoragePtr sx = input.storage(), sw = weight.storage(), so = out.storage();
        StoragePtr sbias = bias.defined() ? bias.storage() : nullptr;
        std::vector<StoragePtr> inputs{sx, sw};
        if (sbias) inputs.push_back(sbias);
        record(inputs, out, [=] {
            const double* g = so->grad.data();
            const double* xd = sx->data.data();
            const double* wd = sw->data.data();
            double* gx = sx->requires_grad ? sx->ensure_grad().data() : nullptr;
            double* gw = sw->requires_grad ? sw->ensure_grad().data() : nullptr;
            double* gb = (sbias && sbias->requires_grad) ? sbias->ensure_grad().data() : nullptr;
            std::vector<double> cols(rows * lout);
            for (std::size_t b = 0; b < nb; ++b) {
                const double* gbatch = g + b * cout * lout;
                if (gb) {
                    for (std::size_t co = 0; co < cout; ++co) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < lout; ++o) acc += gbatch[co * lout + o];
                        gb[co] += acc;
                    }
                }
                if (gw) {
                    im2col(xd + b * cin * len, cols.data());
                    gemm_nt_acc(gbatch, cols.data(), gw, cout, lout, rows);
                }
                if (gx) {
                    std::fill(cols.begin(), cols.end(), 0.0);
                    gemm_tn_acc(wd, gbatch, cols.data(), cout, rows, lout);
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        double* gxrow = gx + (b * cin + ci) * len;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const double* crow = cols.data() + (ci * k + kk) * lout;
                            const auto [lo, hi] = ranges[kk];
                            for (std::size_t o = lo; o < hi; ++o) gxrow[o * stride + kk - pad] += crow[o];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
    if (input.rank() != 4 || weight.rank() != 4 || input.dim(1) != weight.dim(1)) {
        throw DimensionError("conv2d: input " + to_string(input.shape()) + " incompatible with weight " +
                             to_string(weight.shape()));
    }
    if (opts.stride_freq == 0 || opts.stride_time == 0) throw ContractError("conv2d: strides must be >= 1");
    const std::size_t nb = input.dim(0), cin = input.dim(1), nf = input.dim(2), nt = input.dim(3);
    const std::size_t cout = weight.dim(0), kf = weight.dim(2), kt = weight.dim(3);
    const std::size_t sf = opts.stride_freq, st = opts.stride_time, pf = opts.pad_freq, pt = opts.pad_time;
    if (kf > nf + 2 * pf || kt > nt + 2 * pt) {
        throw DimensionError("conv2d: kernel " + to_string(weight.shape()) + " exceeds padded input " +
                             to_string(input.shape()));
    }
    check_bias(bias, cout, "conv2d");
    const std::size_t fo_n = (nf + 2 * pf - kf) / sf + 1;
    const std::size_t to_n = (nt + 2 * pt - kt) / st + 1;
    Tensor out(Shape{nb, cout, fo_n, to_n});
    const double* x = input.data().data();
    const double* w = weight.data().data();
    double* y = out.data().data();
    std::vector<std::pair<std::size_t, std::size_t>> frange(kf), trange(kt);
    for (std::size_t a = 0; a < kf; ++a) frange[a] = valid_range(fo_n, nf, sf, a, pf);
    for (std::size_t a = 0; a < kt; ++a) trange[a] = valid_range(to_n, nt, st, a, pt);
    const std::size_t plane_in = nf * nt, plane_out = fo_n * to_n;
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* yplane = y + (b * cout + co) * plane_out;
            if (bias.defined()) std::fill_n(yplane, plane_out, bias.data()[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* xplane = x + (b * cin + ci) * plane_in;
                const double* wk = w + (co * cin + ci) * kf * kt;
                for (std::size_t a = 0; a < kf; ++a) {
                    const auto [flo, fhi] = frange[a];
                    for (std::size_t c = 0; c < kt; ++c) {
                        const double wv = wk[a * kt + c];
                        const auto [tlo, thi] = trange[c];
                        for (std::size_t fo = flo; fo < fhi; ++fo) {
                            const double* xrow = xplane + (fo * sf + a - pf) * nt;
                            double* yrow = yplane + fo * to_n;
                            if (st == 1) {
                                const double* xs = xrow + (tlo + c - pt);
                                double* ys = yrow + tlo;
                                for (std::size_t to = 0; to < thi - tlo; ++to) ys[to] += wv * xs[to];
                            } else {
                                for (std::size_t to = tlo; to < thi; ++to) yrow[to] += wv * xrow[to * st + c - pt];
                            }
                        }
                    }
                }
            }
        }
    }
    if (should_record({&input, &weight, &bias})) {
        StoragePtr sx = input.storage(), sw = weight.storage(), so = out.storage();
        StoragePtr sbias = bias.defined() ? bias.storage() : nullptr;
        std::vector<StoragePtr> inputs{sx, sw};
        if (sbias) inputs.push_back(sbias);
        record(inputs, out, [=] {
            const double* g = so->grad.data();
            const double* xd = sx->data.data();
            const double* wd = sw->data.data();
            double* gx = sx->requires_grad ? sx->ensure_grad().data() : nullptr;
            double* gw = sw->requires_grad ? sw->ensure_grad().data() : nullptr;
            double* gb = (sbias && sbias->requires_grad) ? sbias->ensure_grad().data() : nullptr;
            for (std::size_t b = 0; b < nb; ++b) {
                for (std::size_t co = 0; co < cout; ++co) {
                    const double* gplane = g + (b * cout + co) * plane_out;
                    if (gb) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < plane_out; ++i) acc += gplane[i];
                        gb[co] += acc;
                    }
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double* xplane = xd + (b * cin + ci) * plane_in;
                        double* gxplane = gx ? gx + (b * cin + ci) * plane_in : nullptr;
                        const double* wk = wd + (co * cin + ci) * kf * kt;
                        double* gwk = gw ? gw + (co * cin + ci) * kf * kt : nullptr;
                        for (std::size_t a = 0; a < kf; ++a) {
                            const auto [flo, fhi] = frange[a];
                            for (std::size_t c = 0; c < kt; ++c) {
                                const auto [tlo, thi] = trange[c];
                                const double wv = wk[a * kt + c];
                                double acc = 0.0;
                                for (std::size_t fo = flo; fo < fhi; ++fo) {
                                    const std::size_t row = (fo * sf + a - pf) * nt;
                                    const double* grow = gplane + fo * to_n;
                                    if (gwk) {
                                        const double* xrow = xplane + row;
                                        for (std::size_t to = tlo; to < thi; ++to)
                                            acc += grow[to] * xrow[to * st + c - pt];
                                    }
                                    if (gxplane) {
                                        double* gxrow = gxplane + row;
                                        for (std::size_t to = tlo; to < thi; ++to)
                                            gxrow[to * st + c - pt] += wv * grow[to];
                                    }
                                }
                                if (gwk) gwk[a * kt + c] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

AxisView pool_view(const Tensor& x, std::size_t axis, std::size_t window, std::size_t stride, const char* op,
                   std::size_t& out_extent) {
    require_axis(x, axis, op);
    if (stride == 0 || window == 0) throw ContractError(std::string(op) + ": window and stride must be >= 1");
    if (window > x.dim(axis)) {
        throw DimensionError(std::string(op) + ": window " + std::to_string(window) + " exceeds extent " +
                             std::to_string(x.dim(axis)) + " of axis " + std::to_string(axis));
    }
    out_extent = (x.dim(axis) - window) / stride + 1;
    return axis_view(x.shape(), axis);
}

}  // namespace

Tensor max_pool(const Tensor& x, std::size_t axis, std::size_t window, std::size_t stride) {
    std::size_t on = 0;
    const AxisView v = pool_view(x, axis, window, stride, "max_pool", on);
    Shape out_shape = x.shape();
    out_shape[axis] = on;
    Tensor out(out_shape);
    std::vector<std::uint32_t> arg(out.size());
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (std::size_t o = 0; o < v.outer && v.inner == 1; ++o) {
        const double* xo = xd + o * v.extent;
        for (std::size_t p = 0; p < on; ++p) {
            std::size_t best = p * stride;
            for (std::size_t w = best + 1; w < p * stride + window; ++w) best = xo[w] > xo[best] ? w : best;
            od[o * on + p] = xo[best];
            arg[o * on + p] = static_cast<std::uint32_t>(best);
        }
    }
    for (std::size_t o = 0; o < v.outer && v.inner != 1; ++o) {
        const double* xo = xd + o * v.extent * v.inner;
        for (std::size_t p = 0; p < on; ++p) {
            double* orow = od + (o * on + p) * v.inner;
            std::uint32_t* arow = arg.data() + (o * on + p) * v.inner;
            const std::size_t start = p * stride;
            std::copy_n(xo + start * v.inner, v.inner, orow);
            std::fill_n(arow, v.inner, static_cast<std::uint32_t>(start));
            for (std::size_t w = 1; w < window; ++w) {
                const double* xr = xo + (start + w) * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) {
                    if (xr[i] > orow[i]) {
                        orow[i] = xr[i];
                        arow[i] = static_cast<std::uint32_t>(start + w);
                    }
                }
            }
        }
    }
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, v, on, arg = std::move(arg)] {
            auto& gx = sx->ensure_grad();
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t p = 0; p < on; ++p) {
                    const std::size_t base = (o * on + p) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        gx[(o * v.extent + arg[base + i]) * v.inner + i] += so->grad[base + i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor avg_pool(const Tensor& x, std::size_t axis, std::size_t window, std::size_t stride) {
    std::size_t on = 0;
    const AxisView v = pool_view(x, axis, window, stride, "avg_pool", on);
    Shape out_shape = x.shape();
    out_shape[axis] = on;
    Tensor out(out_shape);
    const double inv = 1.0 / static_cast<double>(window);
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        const double* xo = xd + o * v.extent * v.inner;
        for (std::size_t p = 0; p < on; ++p) {
            double* orow = od + (o * on + p) * v.inner;
            for (std::size_t w = 0; w < window; ++w) {
                const double* xr = xo + (p * stride + w) * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) orow[i] += xr[i];
            }
            for (std::size_t i = 0; i < v.inner; ++i) orow[i] *= inv;
        }
    }
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, v, on, window, stride, inv] {
            auto& gx = sx->ensure_grad();
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t p = 0; p < on; ++p) {
                    const double* grow = so->grad.data() + (o * on + p) * v.inner;
                    for (std::size_t w = 0; w < window; ++w) {
                        double* gr = gx.data() + (o * v.extent + p * stride + w) * v.inner;
                        for (std::size_t i = 0; i < v.inner; ++i) gr[i] += grow[i] * inv;
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int r = static_cast<int>(x.rank());
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid");
    const AxisView v = axis_view(x.shape(), static_cast<std::size_t>(ax));
    Tensor out(x.shape());
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.extent * v.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, xd[base + e * v.inner]);
            double total = 0.0;
            for (std::size_t e = 0; e < v.extent; ++e) {
                const double ev = std::exp(xd[base + e * v.inner] - mx);
                od[base + e * v.inner] = ev;
                total += ev;
            }
            const double inv = 1.0 / total;
            for (std::size_t e = 0; e < v.extent; ++e) od[base + e * v.inner] *= inv;
        }
    }
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, v] {
            auto& gx = sx->ensure_grad();
            const double* y = so->data.data();
            const double* g = so->grad.data();
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t i = 0; i < v.inner; ++i) {
                    const std::size_t base = o * v.extent * v.inner + i;
                    double dot = 0.0;
                    for (std::size_t e = 0; e < v.extent; ++e) dot += g[base + e * v.inner] * y[base + e * v.inner];
                    for (std::size_t e = 0; e < v.extent; ++e) {
                        const std::size_t idx = base + e * v.inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so] {
            auto& gx = sx->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (sx->data[i] > 0.0) gx[i] += so->grad[i];
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        const double v = xd[i];
        if (v >= 0.0) {
            od[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            od[i] = e / (1.0 + e);
        }
    }
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so] {
            auto& gx = sx->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const double y = so->data[i];
                gx[i] += so->grad[i] * y * (1.0 - y);
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: probability must lie in [0, 1)");
    if (p == 0.0) return x;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    for (double& m : mask) m = uniform(rng) >= p ? keep_scale : 0.0;
    Tensor out(x.shape());
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * mask[i];
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, mask = std::move(mask)] {
            auto& gx = sx->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i] * mask[i];
        });
    }
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  bool training) {
    if (x.rank() < 2) throw DimensionError("batch_norm: input rank must be >= 2");
    const std::size_t nb = x.dim(0), nc = x.dim(1);
    if (gamma.size() != nc || beta.size() != nc || stats.running_mean.size() != nc ||
        stats.running_var.size() != nc) {
        throw DimensionError("batch_norm: parameters do not match " + std::to_string(nc) + " channels of " +
                             to_string(x.shape()));
    }
    const std::size_t spatial = x.size() / (nb * nc);
    const std::size_t count = nb * spatial;
    std::vector<double> inv_std(nc);
    std::vector<double> xhat(x.size());
    const double* xd = x.data().data();
    const double* gd = gamma.data().data();
    const double* bd = beta.data().data();
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t c = 0; c < nc; ++c) {
        double mu = 0.0;
        double var = 0.0;
        if (training) {
            for (std::size_t b = 0; b < nb; ++b) {
                const double* row = xd + (b * nc + c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) mu += row[s];
            }
            mu /= static_cast<double>(count);
            for (std::size_t b = 0; b < nb; ++b) {
                const double* row = xd + (b * nc + c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) var += (row[s] - mu) * (row[s] - mu);
            }
            const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : 0.0;
            var /= static_cast<double>(count);
            rm[c] = (1.0 - stats.momentum) * rm[c] + stats.momentum * mu;
            rv[c] = (1.0 - stats.momentum) * rv[c] + stats.momentum * unbiased;
        } else {
            mu = rm[c];
            var = rv[c];
        }
        inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
        for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t off = (b * nc + c) * spatial;
            for (std::size_t s = 0; s < spatial; ++s) xhat[off + s] = (xd[off + s] - mu) * inv_std[c];
        }
    }
    Tensor out(x.shape());
    double* od = out.data().data();
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t c = 0; c < nc; ++c) {
            const std::size_t off = (b * nc + c) * spatial;
            for (std::size_t s = 0; s < spatial; ++s) od[off + s] = gd[c] * xhat[off + s] + bd[c];
        }
    }
    if (should_record({&x, &gamma, &beta})) {
        StoragePtr sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage();
        record({sx, sg, sb}, out,
               [sx, sg, sb, so, nb, nc, spatial, count, training, inv_std = std::move(inv_std),
                xhat = std::move(xhat)] {
                   const double* g = so->grad.data();
                   double* gx = sx->requires_grad ? sx->ensure_grad().data() : nullptr;
                   double* gg = sg->requires_grad ? sg->ensure_grad().data() : nullptr;
                   double* gb = sb->requires_grad ? sb->ensure_grad().data() : nullptr;
                   for (std::size_t c = 0; c < nc; ++c) {
                       double sum_dy = 0.0;
                       double sum_dy_xhat = 0.0;
                       for (std::size_t b = 0; b < nb; ++b) {
                           const std::size_t off = (b * nc + c) * spatial;
                           for (std::size_t s = 0; s < spatial; ++s) {
                               sum_dy += g[off + s];
                               sum_dy_xhat += g[off + s] * xhat[off + s];
                           }
                       }
                       if (gg) gg[c] += sum_dy_xhat;
                       if (gb) gb[c] += sum_dy;
                       if (!gx) continue;
                       const double scale_c = sg->data[c] * inv_std[c];
                       const double n = static_cast<double>(count);
                       for (std::size_t b = 0; b < nb; ++b) {
                           const std::size_t off = (b * nc + c) * spatial;
                           for (std::size_t s = 0; s < spatial; ++s) {
                               if (training) {
                                   gx[off + s] +=
                                       scale_c * (g[off + s] - sum_dy / n - xhat[off + s] * sum_dy_xhat / n);
                               } else {
                                   gx[off + s] += scale_c * g[off + s];
                               }
                           }
                       }
                   }
               });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw DimensionError("layer_norm: empty rank");
    const std::size_t d = x.dim(x.rank() - 1);
    if (gamma.size() != d || beta.size() != d) {
        throw DimensionError("layer_norm: gamma/beta do not match embedding width " + std::to_string(d));
    }
    const std::size_t rows = x.size() / d;
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    Tensor out(x.shape());
    const double* xd = x.data().data();
    const double* gd = gamma.data().data();
    const double* bd = beta.data().data();
    double* od = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = (row[i] - mu) * inv_std[r];
            od[r * d + i] = gd[i] * xhat[r * d + i] + bd[i];
        }
    }
    if (should_record({&x, &gamma, &beta})) {
        StoragePtr sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage();
        record({sx, sg, sb}, out,
               [sx, sg, sb, so, d, rows, inv_std = std::move(inv_std), xhat = std::move(xhat)] {
                   const double* g = so->grad.data();
                   double* gx = sx->requires_grad ? sx->ensure_grad().data() : nullptr;
                   double* gg = sg->requires_grad ? sg->ensure_grad().data() : nullptr;
                   double* gb = sb->requires_grad ? sb->ensure_grad().data() : nullptr;
                   const double* gam = sg->data.data();
                   const double n = static_cast<double>(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                       const double* grow = g + r * d;
                       const double* xh = xhat.data() + r * d;
                       double sum_dy = 0.0;
                       double sum_dy_xhat = 0.0;
                       for (std::size_t i = 0; i < d; ++i) {
                           const double dyg = grow[i] * gam[i];
                           sum_dy += dyg;
                           sum_dy_xhat += dyg * xh[i];
                           if (gg) gg[i] += grow[i] * xh[i];
                           if (gb) gb[i] += grow[i];
                       }
                       if (!gx) continue;
                       for (std::size_t i = 0; i < d; ++i) {
                           const double dyg = grow[i] * gam[i];
                           gx[r * d + i] += inv_std[r] * (dyg - sum_dy / n - xh[i] * sum_dy_xhat / n);
                       }
                   }
               });
    }
    return out;
}

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("bce_loss: prediction " + to_string(pred.shape()) + " vs target " +
                             to_string(target.shape()));
    }
    const std::size_t n = pred.size();
    auto pd = pred.data();
    auto td = target.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pd[i], kBceClamp, 1.0 - kBceClamp);
        total -= td[i] * std::log(p) + (1.0 - td[i]) * std::log(1.0 - p);
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(n));
    if (should_record({&pred})) {
        StoragePtr sp = pred.storage(), st = target.storage(), so = out.storage();
        record({sp}, out, [sp, st, so, n] {
            auto& gp = sp->ensure_grad();
            const double g = so->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double p = sp->data[i];
                if (p < kBceClamp || p > 1.0 - kBceClamp) continue;
                const double t = st->data[i];
                gp[i] += g * (-t / p + (1.0 - t) / (1.0 - p));
            }
        });
    }
    return out;
}

Tensor override_row(const Tensor& x, std::size_t row, std::span<const double> values) {
    if (x.rank() != 3 || x.dim(1) != x.dim(2)) {
        throw DimensionError("override_row: expected [N x S x S], got " + to_string(x.shape()));
    }
    const std::size_t n = x.dim(0), s = x.dim(1);
    if (row >= s) throw DimensionError("override_row: row index out of range");
    const bool shared = values.size() == s;
    if (!shared && values.size() != n * s) {
        throw DimensionError("override_row: expected " + std::to_string(s) + " or " + std::to_string(n * s) +
                             " values, got " + std::to_string(values.size()));
    }
    Tensor out = x.detach();
    auto od = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* src = shared ? values.data() : values.data() + i * s;
        std::copy_n(src, s, od.begin() + static_cast<std::ptrdiff_t>((i * s + row) * s));
    }
    if (should_record({&x})) {
        StoragePtr sx = x.storage(), so = out.storage();
        record({sx}, out, [sx, so, n, s, row] {
            auto& gx = sx->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t r = 0; r < s; ++r) {
                    if (r == row) continue;
                    const std::size_t off = (i * s + r) * s;
                    for (std::size_t c = 0; c < s; ++c) gx[off + c] += so->grad[off + c];
                }
            }
        });
    }
    return out;
}

}  // namespace sattag
