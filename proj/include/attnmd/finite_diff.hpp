#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace attnmd {

/// Central-difference gradient oracle over a flat coordinate vector.
/// Step per coordinate is base_step * (1 + |x_i|). Test-side ground truth for
/// the analytic gradients; independent of any closed form.
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> point,
                                            double base_step = 1e-6) {
    std::vector<double> grad(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double h = base_step * (1.0 + std::fabs(point[i]));
        const double saved = point[i];
        point[i] = saved + h;
        const double fp = f(point);
        point[i] = saved - h;
        const double fm = f(point);
        point[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace attnmd
