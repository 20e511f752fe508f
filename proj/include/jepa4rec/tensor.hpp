#pragma once

// Minimal reverse-mode tape over Eigen double matrices. Nodes are created
// in forward order; backward() replays the tape in reverse. All loss-level
// ops carry hand-derived gradients that the finite-difference suite checks.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace jepa4rec {

using Mat = Eigen::MatrixXd;

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    Mat adam_m, adam_v;

    void resize(Eigen::Index rows, Eigen::Index cols) {
        value = Mat::Zero(rows, cols);
        grad = Mat::Zero(rows, cols);
        adam_m = Mat::Zero(rows, cols);
        adam_v = Mat::Zero(rows, cols);
    }
    void zero_grad() { grad.setZero(); }
};

struct TapeNode {
    Mat val;
    Mat grad;
    bool requires_grad = false;
    std::function<void()> backprop;
};

using Var = std::shared_ptr<TapeNode>;

class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Mat v) { return make(std::move(v), false, {}); }

    // Leaf whose gradient can be read after backward().
    Var leaf(Mat v) { return make(std::move(v), grad_enabled_, {}); }

    // Parameter entry point: backward() accumulates into p.grad.
    Var param(Parameter& p) {
        if (!grad_enabled_) return constant(p.value);
        Var n = make(p.value, true, {});
        TapeNode* self = n.get();
        Parameter* pp = &p;
        self->backprop = [self, pp] { pp->grad += self->grad; };
        return n;
    }

    Var add(const Var& a, const Var& b) {
        Var n = make(a->val + b->val, needs(a, b), {});
        attach(n, [a, b](TapeNode* self) {
            if (a->requires_grad) a->grad += self->grad;
            if (b->requires_grad) b->grad += self->grad;
        });
        return n;
    }

    Var sub(const Var& a, const Var& b) {
        Var n = make(a->val - b->val, needs(a, b), {});
        attach(n, [a, b](TapeNode* self) {
            if (a->requires_grad) a->grad += self->grad;
            if (b->requires_grad) b->grad -= self->grad;
        });
        return n;
    }

    Var scale(const Var& a, double s) {
        Var n = make(a->val * s, a->requires_grad, {});
        attach(n, [a, s](TapeNode* self) {
            if (a->requires_grad) a->grad += s * self->grad;
        });
        return n;
    }

    Var matmul(const Var& a, const Var& b) {
        Var n = make(a->val * b->val, needs(a, b), {});
        attach(n, [a, b](TapeNode* self) {
            if (a->requires_grad) a->grad += self->grad * b->val.transpose();
            if (b->requires_grad) b->grad += a->val.transpose() * self->grad;
        });
        return n;
    }

    // a (m x k) times b^T (n x k) -> m x n
    Var matmul_nt(const Var& a, const Var& b) {
        Var n = make(a->val * b->val.transpose(), needs(a, b), {});
        attach(n, [a, b](TapeNode* self) {
            if (a->requires_grad) a->grad += self->grad * b->val;
            if (b->requires_grad) b->grad += self->grad.transpose() * a->val;
        });
        return n;
    }

    // x (m x n) plus bias row (1 x n) broadcast over rows.
    Var add_row_broadcast(const Var& x, const Var& bias) {
        Mat v = x->val;
        v.rowwise() += bias->val.row(0);
        Var n = make(std::move(v), needs(x, bias), {});
        attach(n, [x, bias](TapeNode* self) {
            if (x->requires_grad) x->grad += self->grad;
            if (bias->requires_grad)
                bias->grad += self->grad.colwise().sum();
        });
        return n;
    }

    Var linear(const Var& x, const Var& w, const Var& b) {
        return add_row_broadcast(matmul(x, w), b);
    }

    Var gather_rows(const Var& a, std::vector<int> ids) {
        Mat v(static_cast<Eigen::Index>(ids.size()), a->val.cols());
        for (std::size_t r = 0; r < ids.size(); ++r) {
            if (ids[r] < 0 || ids[r] >= a->val.rows())
                throw NumericError("gather_rows: index out of bounds");
            v.row(static_cast<Eigen::Index>(r)) = a->val.row(ids[r]);
        }
        Var n = make(std::move(v), a->requires_grad, {});
        attach(n, [a, ids = std::move(ids)](TapeNode* self) {
            if (!a->requires_grad) return;
            for (std::size_t r = 0; r < ids.size(); ++r)
                a->grad.row(ids[r]) +=
                    self->grad.row(static_cast<Eigen::Index>(r));
        });
        return n;
    }

    Var row(const Var& a, Eigen::Index i) {
        Var n = make(a->val.row(i), a->requires_grad, {});
        attach(n, [a, i](TapeNode* self) {
            if (a->requires_grad) a->grad.row(i) += self->grad.row(0);
        });
        return n;
    }

    Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
        Var n = make(a->val.middleCols(start, count), a->requires_grad, {});
        attach(n, [a, start, count](TapeNode* self) {
            if (a->requires_grad)
                a->grad.middleCols(start, count) += self->grad;
        });
        return n;
    }

    Var hconcat(const std::vector<Var>& parts) {
        Eigen::Index rows = parts.front()->val.rows(), cols = 0;
        bool rg = false;
        for (const auto& p : parts) {
            cols += p->val.cols();
            rg = rg || p->requires_grad;
        }
        Mat v(rows, cols);
        Eigen::Index off = 0;
        for (const auto& p : parts) {
            v.middleCols(off, p->val.cols()) = p->val;
            off += p->val.cols();
        }
        Var n = make(std::move(v), rg, {});
        attach(n, [parts](TapeNode* self) {
            Eigen::Index off = 0;
            for (const auto& p : parts) {
                if (p->requires_grad)
                    p->grad += self->grad.middleCols(off, p->val.cols());
                off += p->val.cols();
            }
        });
        return n;
    }

    Var vstack(const std::vector<Var>& blocks) {
        Eigen::Index cols = blocks.front()->val.cols(), rows = 0;
        bool rg = false;
        for (const auto& b : blocks) {
            rows += b->val.rows();
            rg = rg || b->requires_grad;
        }
        Mat v(rows, cols);
        Eigen::Index off = 0;
        for (const auto& b : blocks) {
            v.middleRows(off, b->val.rows()) = b->val;
            off += b->val.rows();
        }
        Var n = make(std::move(v), rg, {});
        attach(n, [blocks](TapeNode* self) {
            Eigen::Index off = 0;
            for (const auto& b : blocks) {
                if (b->requires_grad)
                    b->grad += self->grad.middleRows(off, b->val.rows());
                off += b->val.rows();
            }
        });
        return n;
    }

    // Row-wise layer norm with population variance.
    Var layernorm(const Var& x, const Var& gain, const Var& bias,
                  double eps) {
        const Eigen::Index m = x->val.rows(), d = x->val.cols();
        Mat xhat(m, d);
        Eigen::VectorXd inv_std(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            double mu = x->val.row(r).mean();
            double var =
                (x->val.row(r).array() - mu).square().sum() /
                static_cast<double>(d);
            inv_std(r) = 1.0 / std::sqrt(var + eps);
            xhat.row(r) = (x->val.row(r).array() - mu) * inv_std(r);
        }
        Mat y = xhat;
        y.array().rowwise() *= gain->val.row(0).array();
        y.rowwise() += bias->val.row(0);
        Var n = make(std::move(y), needs(x, gain) || bias->requires_grad, {});
        attach(n, [x, gain, bias, xhat, inv_std](TapeNode* self) {
            const Eigen::Index m = x->val.rows(), d = x->val.cols();
            if (gain->requires_grad)
                gain->grad +=
                    (self->grad.array() * xhat.array()).colwise().sum().matrix();
            if (bias->requires_grad)
                bias->grad += self->grad.colwise().sum();
            if (x->requires_grad) {
                for (Eigen::Index r = 0; r < m; ++r) {
                    Eigen::RowVectorXd dxhat =
                        (self->grad.row(r).array() *
                         gain->val.row(0).array())
                            .matrix();
                    double mean_dxhat = dxhat.mean();
                    double mean_dxhat_xhat =
                        (dxhat.array() * xhat.row(r).array()).sum() /
                        static_cast<double>(d);
                    x->grad.row(r) +=
                        (inv_std(r) *
                         (dxhat.array() - mean_dxhat -
                          xhat.row(r).array() * mean_dxhat_xhat))
                            .matrix();
                }
            }
        });
        return n;
    }

    Var gelu(const Var& x) {
        Mat v = x->val.unaryExpr([](double t) {
            return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0)));
        });
        Var n = make(std::move(v), x->requires_grad, {});
        attach(n, [x](TapeNode* self) {
            if (!x->requires_grad) return;
            Mat d = x->val.unaryExpr([](double t) {
                double cdf = 0.5 * (1.0 + std::erf(t / std::sqrt(2.0)));
                double pdf =
                    std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI);
                return cdf + t * pdf;
            });
            x->grad += (self->grad.array() * d.array()).matrix();
        });
        return n;
    }

    // Row-wise softmax restricted to allowed entries; disallowed entries
    // are exactly zero. allowed is a 0/1 matrix of the same shape.
    Var masked_softmax(const Var& scores, const Mat& allowed) {
        const Eigen::Index m = scores->val.rows(), n_cols = scores->val.cols();
        Mat probs = Mat::Zero(m, n_cols);
        for (Eigen::Index r = 0; r < m; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (Eigen::Index c = 0; c < n_cols; ++c)
                if (allowed(r, c) != 0.0)
                    mx = std::max(mx, scores->val(r, c));
            if (!std::isfinite(mx))
                throw NumericError("masked_softmax: row with no allowed keys");
            double z = 0.0;
            for (Eigen::Index c = 0; c < n_cols; ++c)
                if (allowed(r, c) != 0.0) {
                    probs(r, c) = std::exp(scores->val(r, c) - mx);
                    z += probs(r, c);
                }
            probs.row(r) /= z;
        }
        Var n = make(std::move(probs), scores->requires_grad, {});
        attach(n, [scores](TapeNode* self) {
            if (!scores->requires_grad) return;
            for (Eigen::Index r = 0; r < self->val.rows(); ++r) {
                double dot =
                    (self->grad.row(r).array() * self->val.row(r).array())
                        .sum();
                scores->grad.row(r) +=
                    (self->val.row(r).array() *
                     (self->grad.row(r).array() - dot))
                        .matrix();
            }
        });
        return n;
    }

    // Sum of squared distances between corresponding rows -> 1x1.
    Var squared_diff_sum(const Var& a, const Var& b) {
        Mat diff = a->val - b->val;
        Mat v(1, 1);
        v(0, 0) = diff.squaredNorm();
        Var n = make(std::move(v), needs(a, b), {});
        attach(n, [a, b, diff](TapeNode* self) {
            double g = self->grad(0, 0);
            if (a->requires_grad) a->grad += 2.0 * g * diff;
            if (b->requires_grad) b->grad -= 2.0 * g * diff;
        });
        return n;
    }

    // Mean over rows of cross entropy between softmax(logits) and labels.
    Var cross_entropy_mean(const Var& logits, std::vector<int> labels) {
        const Eigen::Index m = logits->val.rows();
        if (static_cast<Eigen::Index>(labels.size()) != m)
            throw NumericError("cross_entropy_mean: label count mismatch");
        Mat probs(m, logits->val.cols());
        double total = 0.0;
        for (Eigen::Index r = 0; r < m; ++r) {
            double mx = logits->val.row(r).maxCoeff();
            Eigen::RowVectorXd e =
                (logits->val.row(r).array() - mx).exp();
            double z = e.sum();
            probs.row(r) = e / z;
            total += std::log(z) + mx - logits->val(r, labels[r]);
        }
        Mat v(1, 1);
        v(0, 0) = total / static_cast<double>(m);
        Var n = make(std::move(v), logits->requires_grad, {});
        attach(n, [logits, probs, labels = std::move(labels)](TapeNode* self) {
            if (!logits->requires_grad) return;
            double g = self->grad(0, 0) /
                       static_cast<double>(logits->val.rows());
            Mat d = probs;
            for (Eigen::Index r = 0; r < d.rows(); ++r)
                d(r, labels[r]) -= 1.0;
            logits->grad += g * d;
        });
        return n;
    }

    // All pairwise cosine similarities between rows of x (m x d) and rows
    // of y (n x d) -> m x n. Throws on zero-norm rows.
    Var cosine_matrix(const Var& x, const Var& y) {
        const Eigen::Index m = x->val.rows(), n_rows = y->val.rows();
        Eigen::VectorXd nx(m), ny(n_rows);
        for (Eigen::Index i = 0; i < m; ++i) {
            nx(i) = x->val.row(i).norm();
            if (nx(i) == 0.0)
                throw NumericError("cosine: zero-norm vector");
        }
        for (Eigen::Index j = 0; j < n_rows; ++j) {
            ny(j) = y->val.row(j).norm();
            if (ny(j) == 0.0)
                throw NumericError("cosine: zero-norm vector");
        }
        Mat c = x->val * y->val.transpose();
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n_rows; ++j)
                c(i, j) /= nx(i) * ny(j);
        Var n = make(c, needs(x, y), {});
        attach(n, [x, y, nx, ny](TapeNode* self) {
            const Mat& c = self->val;
            const Mat& g = self->grad;
            if (x->requires_grad) {
                for (Eigen::Index i = 0; i < x->val.rows(); ++i) {
                    Eigen::RowVectorXd acc =
                        Eigen::RowVectorXd::Zero(x->val.cols());
                    for (Eigen::Index j = 0; j < y->val.rows(); ++j) {
                        if (g(i, j) == 0.0) continue;
                        acc += g(i, j) *
                               (y->val.row(j) / (nx(i) * ny(j)) -
                                c(i, j) * x->val.row(i) / (nx(i) * nx(i)));
                    }
                    x->grad.row(i) += acc;
                }
            }
            if (y->requires_grad) {
                for (Eigen::Index j = 0; j < y->val.rows(); ++j) {
                    Eigen::RowVectorXd acc =
                        Eigen::RowVectorXd::Zero(y->val.cols());
                    for (Eigen::Index i = 0; i < x->val.rows(); ++i) {
                        if (g(i, j) == 0.0) continue;
                        acc += g(i, j) *
                               (x->val.row(i) / (nx(i) * ny(j)) -
                                c(i, j) * y->val.row(j) / (ny(j) * ny(j)));
                    }
                    y->grad.row(j) += acc;
                }
            }
        });
        return n;
    }

    // Log-sum-exp of a single row (1 x n -> 1 x 1), max-subtracted.
    Var logsumexp_row(const Var& a) {
        double mx = a->val.row(0).maxCoeff();
        double z = (a->val.row(0).array() - mx).exp().sum();
        Mat v(1, 1);
        v(0, 0) = mx + std::log(z);
        Var n = make(std::move(v), a->requires_grad, {});
        attach(n, [a, mx, z](TapeNode* self) {
            if (!a->requires_grad) return;
            a->grad.row(0) +=
                self->grad(0, 0) *
                ((a->val.row(0).array() - mx).exp() / z).matrix();
        });
        return n;
    }

    // Elementwise ln(1 + e^x), computed stably.
    Var softplus(const Var& a) {
        Mat v = a->val.unaryExpr([](double t) {
            return t > 0 ? t + std::log1p(std::exp(-t))
                         : std::log1p(std::exp(t));
        });
        Var n = make(std::move(v), a->requires_grad, {});
        attach(n, [a](TapeNode* self) {
            if (!a->requires_grad) return;
            Mat s = a->val.unaryExpr(
                [](double t) { return 1.0 / (1.0 + std::exp(-t)); });
            a->grad += (self->grad.array() * s.array()).matrix();
        });
        return n;
    }

    Var sum(const Var& a) {
        Mat v(1, 1);
        v(0, 0) = a->val.sum();
        Var n = make(std::move(v), a->requires_grad, {});
        attach(n, [a](TapeNode* self) {
            if (a->requires_grad)
                a->grad.array() += self->grad(0, 0);
        });
        return n;
    }

    Var zero_scalar() { return constant(Mat::Zero(1, 1)); }

    // Backpropagate from a 1x1 root through the tape in reverse order.
    void backward(const Var& root) {
        if (root->val.rows() != 1 || root->val.cols() != 1)
            throw NumericError("backward: root must be scalar");
        if (!root->requires_grad) return;
        root->grad(0, 0) = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            TapeNode* n = it->get();
            if (n->requires_grad && n->backprop) n->backprop();
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    static bool needs(const Var& a, const Var& b) {
        return a->requires_grad || b->requires_grad;
    }

    Var make(Mat v, bool rg, std::function<void()> bp) {
        auto n = std::make_shared<TapeNode>();
        n->val = std::move(v);
        n->requires_grad = rg && grad_enabled_;
        if (n->requires_grad)
            n->grad = Mat::Zero(n->val.rows(), n->val.cols());
        n->backprop = std::move(bp);
        nodes_.push_back(n);
        return n;
    }

    // Attach a backprop lambda that receives the node itself.
    void attach(Var& n, std::function<void(TapeNode*)> f) {
        if (!n->requires_grad) return;
        TapeNode* self = n.get();
        n->backprop = [self, f = std::move(f)] { f(self); };
    }

    bool grad_enabled_;
    std::vector<Var> nodes_;
};

} // namespace jepa4rec
