#include "lfc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lfc/errors.hpp"

namespace lfc {

Tensor4::Tensor4(int n_, int c_, int h_, int w_, double fill)
    : n(n_), c(c_), h(h_), w(w_) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
        throw ConfigError("tensor dimensions must be non-negative, got " + shape_str());
    }
    data.assign(static_cast<std::size_t>(numel()), fill);
}

Tensor4 Tensor4::scalar(double v) {
    Tensor4 t(1, 1, 1, 1);
    t.data[0] = v;
    return t;
}

std::string Tensor4::shape_str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

double Tensor4::item() const {
    if (numel() != 1) {
        throw UsageError("item() requires a scalar tensor, got shape " + shape_str());
    }
    return data[0];
}

void Tensor4::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Tensor4::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor4::max_abs_diff(const Tensor4& o) const {
    require_same_shape(*this, o, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        m = std::max(m, std::abs(data[i] - o.data[i]));
    }
    return m;
}

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ConfigError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
    }
}

}  // namespace lfc
