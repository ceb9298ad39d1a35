#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "voxseg/parallel.hpp"

namespace voxseg {

/// Adam with bias correction. Parameters may live in several separate
/// buffers; one step consumes matching (param, grad, length) spans whose
/// total length and order must stay fixed across steps.
template <typename T>
class Adam {
public:
    struct Span {
        T* param;
        const T* grad;
        std::int64_t n;
    };

    Adam(std::int64_t param_count, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps),
          m_(static_cast<std::size_t>(param_count), T(0)),
          v_(static_cast<std::size_t>(param_count), T(0)) {}

    void step(const std::vector<Span>& spans, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        std::int64_t offset = 0;
        for (const auto& s : spans) {
            T* m_base = m_.data() + offset;
            T* v_base = v_.data() + offset;
            par::parallel_for(s.n, [&, m_base, v_base](std::int64_t i) {
                const double g = double(s.grad[i]);
                const double m = beta1_ * double(m_base[i]) + (1.0 - beta1_) * g;
                const double v = beta2_ * double(v_base[i]) + (1.0 - beta2_) * g * g;
                m_base[i] = T(m);
                v_base[i] = T(v);
                s.param[i] = T(double(s.param[i]) - lr * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            });
            offset += s.n;
        }
        if (offset != std::ssize(m_))
            throw std::runtime_error("adam: span lengths do not cover the parameter count");
    }

    /// Single-buffer convenience overload.
    void step(T* params, const T* grads, std::int64_t n, double lr) {
        step(std::vector<Span>{{params, grads, n}}, lr);
    }

    std::int64_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<T> m_, v_;
};

/// Training-loss-driven learning-rate schedule: multiply by `drop_factor`
/// after `drop_patience` epochs without improvement (counter resets on both
/// improvement and drop); signal stop after `stop_patience` epochs without
/// improvement.
class LrSchedule {
public:
    struct Config {
        double initial_lr = 3e-4;
        double drop_factor = 0.2;
        int drop_patience = 30;
        int stop_patience = 50;
    };

    explicit LrSchedule(const Config& cfg) : cfg_(cfg), lr_(cfg.initial_lr) {
        if (!(cfg.initial_lr > 0.0) || !(cfg.drop_factor > 0.0 && cfg.drop_factor < 1.0) ||
            cfg.drop_patience < 1 || cfg.stop_patience < 1)
            throw std::runtime_error("lr schedule: bad config");
    }

    struct Result {
        double lr;
        bool stop;
    };

    /// Feed one epoch's training loss; returns the lr for the next epoch and
    /// whether training should stop.
    Result observe(double epoch_loss) {
        if (epoch_loss < best_loss_) {
            best_loss_ = epoch_loss;
            since_improve_ = 0;
            since_drop_ = 0;
        } else {
            ++since_improve_;
            ++since_drop_;
        }
        if (since_drop_ >= cfg_.drop_patience) {
            lr_ *= cfg_.drop_factor;
            since_drop_ = 0;
        }
        return {lr_, since_improve_ >= cfg_.stop_patience};
    }

    double lr() const { return lr_; }
    double best_loss() const { return best_loss_; }

private:
    Config cfg_;
    double lr_;
    double best_loss_ = std::numeric_limits<double>::infinity();
    int since_improve_ = 0;
    int since_drop_ = 0;
};

} // namespace voxseg
