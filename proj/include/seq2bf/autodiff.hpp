#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "seq2bf/errors.hpp"
#include "seq2bf/rng.hpp"

namespace seq2bf {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Handle into a Tape. Only meaningful together with the tape that made it.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over dense matrices. Nodes are appended in forward
// order; backward() replays them in reverse, accumulating into grad
// buffers. One tape per forward pass; clear() recycles the storage.
template <typename S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(const Mat<S>& value) { return push(value, {}); }
    Var constant(Mat<S> value) { return push(std::move(value), {}); }

    const Mat<S>& value(Var v) const { return nodes_[v.idx].value; }
    const Mat<S>& grad(Var v) const { return nodes_[v.idx].grad; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void backward(Var root) {
        auto& r = nodes_[root.idx];
        if (r.value.rows() != 1 || r.value.cols() != 1) {
            throw ConstraintError("backward: root must be a scalar");
        }
        for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
        r.grad(0, 0) = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->backward) it->backward();
        }
    }

    // ---- elementwise / structural ----

    Var add(Var a, Var b) {
        Mat<S> v = value(a) + value(b);
        return push(std::move(v), [this, a, b](const Mat<S>& g) {
            grad_ref(a) += g;
            grad_ref(b) += g;
        });
    }

    // broadcast a 1xC row over every row of `a`
    Var add_rowvec(Var a, Var row) {
        Mat<S> v = value(a).rowwise() + value(row).row(0);
        return push(std::move(v), [this, a, row](const Mat<S>& g) {
            grad_ref(a) += g;
            grad_ref(row) += g.colwise().sum();
        });
    }

    Var add_const(Var a, const Mat<S>& c) {
        Mat<S> v = value(a) + c;
        return push(std::move(v), [this, a](const Mat<S>& g) { grad_ref(a) += g; });
    }

    Var scale(Var a, S s) {
        Mat<S> v = value(a) * s;
        return push(std::move(v), [this, a, s](const Mat<S>& g) { grad_ref(a) += g * s; });
    }

    Var relu(Var a) {
        Mat<S> v = value(a).cwiseMax(S(0));
        return push(std::move(v), [this, a](const Mat<S>& g) {
            grad_ref(a).array() += g.array() * (value(a).array() > S(0)).template cast<S>();
        });
    }

    Var matmul(Var a, Var b) {
        Mat<S> v = value(a) * value(b);
        return push(std::move(v), [this, a, b](const Mat<S>& g) {
            grad_ref(a) += g * value(b).transpose();
            grad_ref(b) += value(a).transpose() * g;
        });
    }

    // a * b^T without materializing the transpose as a node
    Var matmul_nt(Var a, Var b) {
        Mat<S> v = value(a) * value(b).transpose();
        return push(std::move(v), [this, a, b](const Mat<S>& g) {
            grad_ref(a) += g * value(b);
            grad_ref(b) += g.transpose() * value(a);
        });
    }

    Var rows(Var a, std::vector<int> idx) {
        Mat<S> v(idx.size(), value(a).cols());
        for (std::size_t i = 0; i < idx.size(); ++i) v.row(i) = value(a).row(idx[i]);
        return push(std::move(v), [this, a, idx = std::move(idx)](const Mat<S>& g) {
            auto& da = grad_ref(a);
            for (std::size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += g.row(i);
        });
    }

    Var slice_cols(Var a, int begin, int n) {
        Mat<S> v = value(a).middleCols(begin, n);
        return push(std::move(v), [this, a, begin, n](const Mat<S>& g) {
            grad_ref(a).middleCols(begin, n) += g;
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        Eigen::Index rows = value(parts.front()).rows(), cols = 0;
        for (Var p : parts) cols += value(p).cols();
        Mat<S> v(rows, cols);
        Eigen::Index at = 0;
        for (Var p : parts) {
            v.middleCols(at, value(p).cols()) = value(p);
            at += value(p).cols();
        }
        return push(std::move(v), [this, parts](const Mat<S>& g) {
            Eigen::Index at = 0;
            for (Var p : parts) {
                const auto n = value(p).cols();
                grad_ref(p) += g.middleCols(at, n);
                at += n;
            }
        });
    }

    Var sum(Var a) {
        Mat<S> v(1, 1);
        v(0, 0) = value(a).sum();
        return push(std::move(v), [this, a](const Mat<S>& g) {
            grad_ref(a).array() += g(0, 0);
        });
    }

    Var add_scalars(const std::vector<Var>& scalars) {
        Mat<S> v = Mat<S>::Zero(1, 1);
        for (Var s : scalars) v(0, 0) += value(s)(0, 0);
        return push(std::move(v), [this, scalars](const Mat<S>& g) {
            for (Var s : scalars) grad_ref(s)(0, 0) += g(0, 0);
        });
    }

    // ---- attention / normalization / losses ----

    // softmax over each row of `scores + mask`; masked entries carry -inf in
    // `mask` and come out exactly zero
    Var masked_softmax_rows(Var scores, const Mat<S>& mask) {
        const Mat<S>& x = value(scores);
        Mat<S> z = x + mask;
        Mat<S> p(z.rows(), z.cols());
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            const S m = z.row(r).maxCoeff();
            p.row(r) = (z.row(r).array() - m).exp();
            const S denom = p.row(r).sum();
            p.row(r) /= denom;
        }
        Var out = push(p, {});
        nodes_[out.idx].backward = [this, scores, out]() {
            const Mat<S>& y = value(out);
            const Mat<S>& g = grad(out);
            auto& dx = grad_ref(scores);
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const S dot = y.row(r).dot(g.row(r));
                dx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
            }
        };
        return out;
    }

    // per-row layer norm with learned gain/bias (1xC each)
    Var layer_norm(Var x, Var gain, Var bias, S eps) {
        const Mat<S>& xv = value(x);
        const Eigen::Index c = xv.cols();
        Mat<S> xhat(xv.rows(), c);
        Mat<S> inv_std(xv.rows(), 1);
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            const S mu = xv.row(r).mean();
            const S var = (xv.row(r).array() - mu).square().mean();
            inv_std(r, 0) = S(1) / std::sqrt(var + eps);
            xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r, 0);
        }
        Mat<S> v(xv.rows(), c);
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            v.row(r) = xhat.row(r).cwiseProduct(value(gain).row(0)) + value(bias).row(0);
        }
        Var out = push(std::move(v), {});
        auto cache = std::make_shared<std::pair<Mat<S>, Mat<S>>>(std::move(xhat),
                                                                 std::move(inv_std));
        nodes_[out.idx].backward = [this, x, gain, bias, out, cache]() {
            const Mat<S>& g = grad(out);
            const Mat<S>& xh = cache->first;
            const Mat<S>& istd = cache->second;
            const Eigen::Index c = xh.cols();
            grad_ref(gain) += (g.array() * xh.array()).colwise().sum().matrix();
            grad_ref(bias) += g.colwise().sum();
            auto& dx = grad_ref(x);
            for (Eigen::Index r = 0; r < xh.rows(); ++r) {
                Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
                    g.row(r).array() * value(gain).row(0).array();
                const S sum_dxhat = dxhat.sum();
                const S sum_dxhat_xhat = (dxhat * xh.row(r).array()).sum();
                dx.row(r).array() += istd(r, 0) / S(c) *
                                     (S(c) * dxhat - sum_dxhat -
                                      xh.row(r).array() * sum_dxhat_xhat);
            }
        };
        return out;
    }

    // inverted dropout; rate 0 is the identity
    Var dropout(Var x, S rate, Rng& rng) {
        if (rate <= S(0)) return x;
        const Mat<S>& xv = value(x);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto mask = std::make_shared<Mat<S>>(xv.rows(), xv.cols());
        const S keep_scale = S(1) / (S(1) - rate);
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            for (Eigen::Index c = 0; c < xv.cols(); ++c) {
                (*mask)(r, c) = u(rng) < static_cast<double>(rate) ? S(0) : keep_scale;
            }
        }
        Mat<S> v = xv.cwiseProduct(*mask);
        return push(std::move(v), [this, x, mask](const Mat<S>& g) {
            grad_ref(x) += g.cwiseProduct(*mask);
        });
    }

    // sum over rows of label-smoothed cross entropy between logits rows and
    // integer targets
    Var cross_entropy_sum(Var logits, std::vector<int> targets, S smoothing = S(0)) {
        const Mat<S>& x = value(logits);
        if (static_cast<Eigen::Index>(targets.size()) != x.rows()) {
            throw ConstraintError("cross_entropy_sum: target/row count mismatch");
        }
        const Eigen::Index vsize = x.cols();
        auto probs = std::make_shared<Mat<S>>(x.rows(), vsize);
        S total = S(0);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const S m = x.row(r).maxCoeff();
            Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(r).array() - m).exp();
            const S z = e.sum();
            probs->row(r) = (e / z).matrix();
            const S lse = m + std::log(z);
            const S nll = lse - x(r, targets[r]);
            total += nll;
            if (smoothing > S(0)) {
                const S uniform_nll = lse - x.row(r).mean();
                total += smoothing * (uniform_nll - nll);
            }
        }
        Mat<S> v(1, 1);
        v(0, 0) = total;
        return push(std::move(v),
                    [this, logits, targets = std::move(targets), probs, smoothing,
                     vsize](const Mat<S>& g) {
                        const S go = g(0, 0);
                        auto& dx = grad_ref(logits);
                        for (Eigen::Index r = 0; r < probs->rows(); ++r) {
                            dx.row(r) += go * probs->row(r);
                            dx(r, targets[r]) -= go * (S(1) - smoothing);
                            if (smoothing > S(0)) {
                                dx.row(r).array() -= go * smoothing / S(vsize);
                            }
                        }
                    });
    }

private:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        std::function<void()> backward;
    };

    Mat<S>& grad_ref(Var v) { return nodes_[v.idx].grad; }

    Var push(Mat<S> value, std::function<void(const Mat<S>&)> back) {
        Node n;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        const int idx = static_cast<int>(nodes_.size()) - 1;
        if (back) {
            nodes_[idx].backward = [this, idx, back = std::move(back)]() {
                back(nodes_[idx].grad);
            };
        }
        return Var{idx};
    }

    std::vector<Node> nodes_;
};

}  // namespace seq2bf
