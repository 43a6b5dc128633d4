#include "g2d/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace g2d {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps) {
    if (!(eps > 0.0)) throw TensorError("grad_check: eps must be positive");

    Tensor probe = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
    Tensor loss = f(probe);
    if (loss.numel() != 1) throw TensorError("grad_check: f must return a scalar");
    backward(loss);
    std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

    GradCheckResult r;
    auto vals = probe.mutable_data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        vals[i] = keep + eps;
        const double fp = f(probe).item();
        vals[i] = keep - eps;
        const double fm = f(probe).item();
        vals[i] = keep;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        if (err >= r.max_rel_err) {
            r.max_rel_err = err;
            r.worst_index = i;
            r.analytic = a;
            r.numeric = numeric;
        }
    }
    return r;
}

}  // namespace g2d
