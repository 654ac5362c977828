#pragma once

#include <cmath>

#include "lipsync/core/params.hpp"

namespace lipsync {

// Adam with optional global-norm gradient clipping. Frozen parameters are
// skipped entirely (they also never receive gradient from the graph).
template <class T>
class AdamOptimizer {
public:
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_global_norm = 0.0;  // 0 disables clipping
    int64_t step_count = 0;

    // lr_scale multiplies lr for this step (cosine decay lives in trainers).
    void step(ParamStore<T>& store, double lr_scale = 1.0) {
        double scale = 1.0;
        if (clip_global_norm > 0.0) {
            double sq = 0.0;
            for (auto& p : store.all()) {
                if (!p.trainable) continue;
                for (const T& g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
            }
            const double norm = std::sqrt(sq);
            if (norm > clip_global_norm) scale = clip_global_norm / norm;
        }
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        const double alpha = lr * lr_scale * std::sqrt(bc2) / bc1;
        for (auto& p : store.all()) {
            if (!p.trainable) continue;
            if (!p.adam_m.defined()) {
                p.adam_m = Tensor<T>::zeros(p.value.shape());
                p.adam_v = Tensor<T>::zeros(p.value.shape());
            }
            T* w = p.value.data();
            T* g = p.grad.data();
            T* m = p.adam_m.data();
            T* v = p.adam_v.data();
            const int64_t n = p.value.numel();
            for (int64_t k = 0; k < n; ++k) {
                const double gk = static_cast<double>(g[k]) * scale;
                const double mk = beta1 * static_cast<double>(m[k]) + (1.0 - beta1) * gk;
                const double vk = beta2 * static_cast<double>(v[k]) + (1.0 - beta2) * gk * gk;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                w[k] = static_cast<T>(static_cast<double>(w[k]) - alpha * mk / (std::sqrt(vk) + eps));
            }
        }
    }
};

// half-cosine decay from 1 to floor over total steps
inline double cosine_decay(int64_t step, int64_t total_steps, double floor = 0.0) {
    if (total_steps <= 0) return 1.0;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace lipsync
