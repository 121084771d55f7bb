#pragma once

#include <string>

#include "shapereg/errors.hpp"

namespace shapereg {

// Weights of the second-order Sobolev metric:
//   a0 <h,k> + a1 shear + b1 scale + c1 bend + d1 twist + a2 <Lap h, Lap k>
struct MetricCoefficients {
    double a0 = 1.0;
    double a1 = 10.0;
    double b1 = 10.0;
    double c1 = 10.0;
    double d1 = 1.0;
    double a2 = 1.0;

    // Name of the default profile; bumped whenever the defaults change.
    static constexpr const char* kDefaultProfile = "sobolev2-default-v1";

    void validate() const {
        const double all[] = {a0, a1, b1, c1, d1, a2};
        bool any = false;
        for (double w : all) {
            if (!(w >= 0.0)) throw InputError("metric coefficients must be nonnegative");
            any = any || w > 0.0;
        }
        if (!any) throw InputError("at least one metric coefficient must be positive");
    }

    bool all_positive() const { return a0 > 0 && a1 > 0 && b1 > 0 && c1 > 0 && d1 > 0 && a2 > 0; }

    MetricCoefficients operator+(const MetricCoefficients& o) const {
        return {a0 + o.a0, a1 + o.a1, b1 + o.b1, c1 + o.c1, d1 + o.d1, a2 + o.a2};
    }
    bool operator==(const MetricCoefficients&) const = default;
};

} // namespace shapereg
