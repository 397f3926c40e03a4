#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "terraphys/numkit/tensor.hpp"

namespace terraphys::numkit {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled, applied before the moment update
};

// Adam with decoupled weight decay. State is explicit so optimizers can be
// serialized or reset; moment shapes always mirror the parameter shapes.
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    long long step_count() const { return step_; }

    // params[i] updated in place from grads[i]; names only feed diagnostics.
    void step(const std::vector<Tensor*>& params,
              const std::vector<const Tensor*>& grads,
              const std::vector<std::string>& names) {
        if (params.size() != grads.size())
            fail("adam-step: ", params.size(), " params vs ", grads.size(), " grads");
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.push_back(Tensor::zeros(p->shape));
                v_.push_back(Tensor::zeros(p->shape));
            }
        }
        if (m_.size() != params.size())
            fail("adam-step: state holds ", m_.size(), " slots, got ", params.size(), " params");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = *grads[i];
            if (!p.same_shape(g))
                fail("adam-step: shape mismatch for '", name_of(names, i), "': param ",
                     shape_str(p.shape), " grad ", shape_str(g.shape));
            for (double gv : g.values)
                if (!std::isfinite(gv))
                    fail("adam-step: non-finite gradient for parameter '", name_of(names, i), "'");
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                if (cfg_.weight_decay != 0.0) p.values[j] -= cfg_.lr * cfg_.weight_decay * p.values[j];
                m.values[j] = cfg_.beta1 * m.values[j] + (1.0 - cfg_.beta1) * g.values[j];
                v.values[j] = cfg_.beta2 * v.values[j] + (1.0 - cfg_.beta2) * g.values[j] * g.values[j];
                const double mhat = m.values[j] / bc1;
                const double vhat = v.values[j] / bc2;
                p.values[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void reset() {
        step_ = 0;
        m_.clear();
        v_.clear();
    }

private:
    static std::string name_of(const std::vector<std::string>& names, std::size_t i) {
        return i < names.size() ? names[i] : cat("param", i);
    }

    AdamConfig cfg_;
    long long step_ = 0;
    std::vector<Tensor> m_, v_;
};

} // namespace terraphys::numkit
