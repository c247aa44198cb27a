#include "alseg/svm.hpp"

#include "alseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

#include <fmt/format.h>

namespace alseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTau = 1e-12;
constexpr std::uint64_t kMaxIterations = 10'000'000;

// Rows of Q_ij = y_i y_j k(x_i, x_j) indexed by original sample order. Entries are
// filled lazily so a shrunk problem only pays for the active columns.
class QRowCache {
public:
    QRowCache(std::span<const std::span<const double>> rows, std::span<const int> y, double gamma,
              const SolverOptions& opts)
        : rows_(rows), y_(y), gamma_(gamma), cap_evals_(opts.max_kernel_evaluations) {
        const std::size_t l = rows.size();
        const std::size_t row_bytes = l * (sizeof(double) + 1) + 64;
        max_rows_ = std::max<std::size_t>(2, opts.cache_bytes / row_bytes);
    }

    // Returns the row of i with every column in `cols` valid.
    const double* row(std::size_t i, std::span<const std::size_t> cols) {
        Entry& e = touch(i);
        for (std::size_t j : cols) {
            fill(e, i, j);
        }
        return e.values.data();
    }

    const double* full_row(std::size_t i) {
        Entry& e = touch(i);
        for (std::size_t j = 0; j < rows_.size(); ++j) {
            fill(e, i, j);
        }
        return e.values.data();
    }

    std::uint64_t evaluations() const { return evals_; }

private:
    struct Entry {
        std::vector<double> values;
        std::vector<std::uint8_t> valid;
        std::list<std::size_t>::iterator pos;
    };

    Entry& touch(std::size_t i) {
        auto it = entries_.find(i);
        if (it != entries_.end()) {
            lru_.splice(lru_.begin(), lru_, it->second.pos);
            return it->second;
        }
        if (entries_.size() >= max_rows_) {
            entries_.erase(lru_.back());
            lru_.pop_back();
        }
        lru_.push_front(i);
        Entry& e = entries_[i];
        e.values.assign(rows_.size(), 0.0);
        e.valid.assign(rows_.size(), 0);
        e.pos = lru_.begin();
        return e;
    }

    void fill(Entry& e, std::size_t i, std::size_t j) {
        if (e.valid[j]) {
            return;
        }
        if (++evals_ > cap_evals_) {
            fail(ErrorCode::NotConverged,
                 fmt::format("solver exceeded {} kernel evaluations", cap_evals_));
        }
        e.values[j] = y_[i] * y_[j] * gaussian_kernel(rows_[i], rows_[j], gamma_);
        e.valid[j] = 1;
    }

    std::span<const std::span<const double>> rows_;
    std::span<const int> y_;
    double gamma_;
    std::uint64_t cap_evals_;
    std::uint64_t evals_ = 0;
    std::size_t max_rows_;
    std::list<std::size_t> lru_;
    std::unordered_map<std::size_t, Entry> entries_;
};

// Pairwise decomposition for min 1/2 b'Qb, 0 <= b <= 1, sum b = nu M split evenly
// over the classes. Working sets stay within one class, so both equality
// constraints hold at every step.
class NuSolver {
public:
    NuSolver(std::span<const std::span<const double>> rows, std::span<const int> y, double gamma,
             const SolverOptions& opts)
        : l_(rows.size()), y_(y), eps_(opts.epsilon), shrinking_(opts.shrinking),
          cache_(rows, y, gamma, opts) {}

    SolverResult run(double nu) {
        beta_.assign(l_, 0.0);
        double sum_pos = nu * static_cast<double>(l_) / 2.0;
        double sum_neg = sum_pos;
        for (std::size_t i = 0; i < l_; ++i) {
            double& budget = y_[i] > 0 ? sum_pos : sum_neg;
            beta_[i] = std::min(1.0, budget);
            budget -= beta_[i];
        }

        active_.resize(l_);
        for (std::size_t i = 0; i < l_; ++i) {
            active_[i] = i;
        }
        all_ = active_;
        is_active_.assign(l_, 1);

        G_.assign(l_, 0.0);
        G_bar_.assign(l_, 0.0);
        for (std::size_t i = 0; i < l_; ++i) {
            if (is_lower(i)) {
                continue;
            }
            const double* Qi = cache_.full_row(i);
            for (std::size_t j = 0; j < l_; ++j) {
                G_[j] += beta_[i] * Qi[j];
            }
            if (is_upper(i)) {
                for (std::size_t j = 0; j < l_; ++j) {
                    G_bar_[j] += Qi[j];
                }
            }
        }

        std::uint64_t iter = 0;
        std::size_t counter = std::min<std::size_t>(l_, 1000) + 1;
        for (;;) {
            if (--counter == 0) {
                counter = std::min<std::size_t>(l_, 1000);
                if (shrinking_) {
                    shrink();
                }
            }
            std::size_t i = 0, j = 0;
            if (!select_working_set(i, j)) {
                reconstruct_gradient();
                if (!select_working_set(i, j)) {
                    break;
                }
                counter = 1;
            }
            if (++iter > kMaxIterations) {
                fail(ErrorCode::NotConverged, "solver exceeded its iteration cap");
            }
            update_pair(i, j);
        }

        SolverResult out;
        const double M = static_cast<double>(l_);
        double r = 0.0;
        const double rho = compute_rho(r);
        double obj = 0.0;
        for (std::size_t i = 0; i < l_; ++i) {
            obj += beta_[i] * G_[i];
        }
        out.alpha.resize(l_);
        for (std::size_t i = 0; i < l_; ++i) {
            out.alpha[i] = beta_[i] / M;
        }
        out.bias = -rho / M;
        out.margin = r / M;
        out.objective = 0.5 * obj / (M * M);
        out.iterations = iter;
        out.kernel_evaluations = cache_.evaluations();
        return out;
    }

private:
    bool is_upper(std::size_t i) const { return beta_[i] >= 1.0; }
    bool is_lower(std::size_t i) const { return beta_[i] <= 0.0; }

    // Second-order working set selection within each class.
    bool select_working_set(std::size_t& out_i, std::size_t& out_j) {
        double gmaxp = -kInf, gmaxp2 = -kInf, gmaxn = -kInf, gmaxn2 = -kInf;
        std::ptrdiff_t ip = -1, in = -1;
        for (std::size_t t : active_) {
            if (y_[t] > 0) {
                if (!is_upper(t) && -G_[t] >= gmaxp) {
                    gmaxp = -G_[t];
                    ip = static_cast<std::ptrdiff_t>(t);
                }
            } else if (!is_lower(t) && G_[t] >= gmaxn) {
                gmaxn = G_[t];
                in = static_cast<std::ptrdiff_t>(t);
            }
        }
        const double* Qp = ip >= 0 ? cache_.row(static_cast<std::size_t>(ip), active_) : nullptr;
        const double* Qn = in >= 0 ? cache_.row(static_cast<std::size_t>(in), active_) : nullptr;

        std::ptrdiff_t jmin = -1;
        double obj_min = kInf;
        for (std::size_t j : active_) {
            if (y_[j] > 0) {
                if (is_lower(j)) continue;
                gmaxp2 = std::max(gmaxp2, G_[j]);
                const double diff = gmaxp + G_[j];
                if (diff > 0.0) {
                    double quad = 2.0 - 2.0 * Qp[j];
                    if (quad <= 0.0) quad = kTau;
                    const double o = -(diff * diff) / quad;
                    if (o <= obj_min) {
                        obj_min = o;
                        jmin = static_cast<std::ptrdiff_t>(j);
                    }
                }
            } else {
                if (is_upper(j)) continue;
                gmaxn2 = std::max(gmaxn2, -G_[j]);
                const double diff = gmaxn - G_[j];
                if (diff > 0.0) {
                    double quad = 2.0 - 2.0 * Qn[j];
                    if (quad <= 0.0) quad = kTau;
                    const double o = -(diff * diff) / quad;
                    if (o <= obj_min) {
                        obj_min = o;
                        jmin = static_cast<std::ptrdiff_t>(j);
                    }
                }
            }
        }
        if (std::max(gmaxp + gmaxp2, gmaxn + gmaxn2) < eps_ || jmin < 0) {
            return false;
        }
        out_j = static_cast<std::size_t>(jmin);
        out_i = static_cast<std::size_t>(y_[out_j] > 0 ? ip : in);
        return true;
    }

    void update_pair(std::size_t i, std::size_t j) {
        const double* Qi = cache_.row(i, active_);
        double Qij = Qi[j];
        const double old_i = beta_[i];
        const double old_j = beta_[j];

        double quad = 2.0 - 2.0 * Qij;
        if (quad <= 0.0) quad = kTau;
        const double delta = (G_[i] - G_[j]) / quad;
        const double sum = old_i + old_j;
        double bi = old_i - delta;
        double bj = old_j + delta;
        if (sum > 1.0) {
            if (bi > 1.0) { bi = 1.0; bj = sum - 1.0; }
        } else if (bj < 0.0) {
            bj = 0.0; bi = sum;
        }
        if (sum > 1.0) {
            if (bj > 1.0) { bj = 1.0; bi = sum - 1.0; }
        } else if (bi < 0.0) {
            bi = 0.0; bj = sum;
        }

        const bool ui = is_upper(i), uj = is_upper(j);
        beta_[i] = bi;
        beta_[j] = bj;
        const double di = bi - old_i, dj = bj - old_j;
        // Rows may be evicted by each other; fetch j after using i's values.
        for (std::size_t k : active_) {
            G_[k] += Qi[k] * di;
        }
        const double* Qj = cache_.row(j, active_);
        for (std::size_t k : active_) {
            G_[k] += Qj[k] * dj;
        }
        if (ui != is_upper(i)) {
            const double* row = cache_.full_row(i);
            const double s = ui ? -1.0 : 1.0;
            for (std::size_t k = 0; k < l_; ++k) G_bar_[k] += s * row[k];
        }
        if (uj != is_upper(j)) {
            const double* row = cache_.full_row(j);
            const double s = uj ? -1.0 : 1.0;
            for (std::size_t k = 0; k < l_; ++k) G_bar_[k] += s * row[k];
        }
    }

    bool be_shrunk(std::size_t i, double g1, double g2, double g3, double g4) const {
        if (is_upper(i)) {
            return y_[i] > 0 ? -G_[i] > g1 : -G_[i] > g4;
        }
        if (is_lower(i)) {
            return y_[i] > 0 ? G_[i] > g2 : G_[i] > g3;
        }
        return false;
    }

    void shrink() {
        double g1 = -kInf, g2 = -kInf, g3 = -kInf, g4 = -kInf;
        for (std::size_t i : active_) {
            if (!is_upper(i)) {
                if (y_[i] > 0) g1 = std::max(g1, -G_[i]);
                else g4 = std::max(g4, -G_[i]);
            }
            if (!is_lower(i)) {
                if (y_[i] > 0) g2 = std::max(g2, G_[i]);
                else g3 = std::max(g3, G_[i]);
            }
        }
        if (!unshrunk_ && std::max(g1 + g2, g3 + g4) <= eps_ * 10.0) {
            unshrunk_ = true;
            reconstruct_gradient();
        }
        std::vector<std::size_t> keep;
        keep.reserve(active_.size());
        for (std::size_t i : active_) {
            if (be_shrunk(i, g1, g2, g3, g4)) {
                is_active_[i] = 0;
            } else {
                keep.push_back(i);
            }
        }
        active_ = std::move(keep);
    }

    // Restores G for inactive variables from G_bar and the free variables.
    void reconstruct_gradient() {
        if (active_.size() == l_) {
            return;
        }
        std::vector<std::size_t> inactive;
        for (std::size_t j = 0; j < l_; ++j) {
            if (!is_active_[j]) {
                inactive.push_back(j);
                G_[j] = G_bar_[j];
            }
        }
        for (std::size_t i = 0; i < l_; ++i) {
            if (is_lower(i) || is_upper(i)) {
                continue;
            }
            const double* Qi = cache_.row(i, inactive);
            for (std::size_t j : inactive) {
                G_[j] += beta_[i] * Qi[j];
            }
        }
        active_ = all_;
        std::fill(is_active_.begin(), is_active_.end(), 1);
    }

    // Offsets from the free variables of each class; returns rho, sets the margin r.
    double compute_rho(double& r) const {
        int free1 = 0, free2 = 0;
        double ub1 = kInf, ub2 = kInf, lb1 = -kInf, lb2 = -kInf, sum1 = 0.0, sum2 = 0.0;
        for (std::size_t i = 0; i < l_; ++i) {
            const bool pos = y_[i] > 0;
            double& ub = pos ? ub1 : ub2;
            double& lb = pos ? lb1 : lb2;
            if (is_upper(i)) {
                lb = std::max(lb, G_[i]);
            } else if (is_lower(i)) {
                ub = std::min(ub, G_[i]);
            } else {
                (pos ? free1 : free2) += 1;
                (pos ? sum1 : sum2) += G_[i];
            }
        }
        // Without free variables take the middle of the feasible interval, or its
        // finite end when every variable of the class sits at the same bound.
        auto offset = [](int nfree, double sum, double ub, double lb) {
            if (nfree > 0) return sum / nfree;
            if (!std::isfinite(ub)) return lb;
            if (!std::isfinite(lb)) return ub;
            return (ub + lb) / 2.0;
        };
        const double r1 = offset(free1, sum1, ub1, lb1);
        const double r2 = offset(free2, sum2, ub2, lb2);
        r = (r1 + r2) / 2.0;
        return (r1 - r2) / 2.0;
    }

    std::size_t l_;
    std::span<const int> y_;
    double eps_;
    bool shrinking_;
    bool unshrunk_ = false;
    QRowCache cache_;
    std::vector<double> beta_;
    std::vector<double> G_;
    std::vector<double> G_bar_;
    std::vector<std::size_t> active_;
    std::vector<std::size_t> all_;
    std::vector<std::uint8_t> is_active_;
};

} // namespace

SolverResult solve_nu_svm(std::span<const std::span<const double>> rows, std::span<const int> labels,
                          double nu, double gamma, const SolverOptions& options) {
    if (rows.size() != labels.size()) {
        fail(ErrorCode::SizeMismatch, "rows and labels differ in length");
    }
    for (int y : labels) {
        if (y != 1 && y != -1) {
            fail(ErrorCode::InvalidArgument, "labels must be +1 or -1");
        }
    }
    const double nmax = nu_max(labels);
    if (!(nu > 0.0) || nu > nmax) {
        fail(ErrorCode::Infeasible, fmt::format("nu = {} outside (0, {}]", nu, nmax));
    }
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        fail(ErrorCode::InvalidArgument, "gamma must be positive");
    }
    if (!(options.epsilon > 0.0)) {
        fail(ErrorCode::InvalidArgument, "solver tolerance must be positive");
    }
    for (const auto& r : rows) {
        if (r.size() != rows.front().size()) {
            fail(ErrorCode::SizeMismatch, "training rows differ in length");
        }
    }
    NuSolver solver(rows, labels, gamma, options);
    return solver.run(nu);
}

} // namespace alseg
