#pragma once

namespace hk {

// The exact coupling <-> singularity-exponent correspondence
//
//   kappa(delta) = 2^alpha G((alpha+delta)/2) G((d-delta)/2)
//                  / ( G(delta/2) G((d-alpha-delta)/2) ),
//
// strictly increasing on (0, (d-alpha)/2], with critical value
// kappa_star = kappa((d-alpha)/2).

double kappa_of_delta(int d, double alpha, double delta);
double kappa_star(int d, double alpha);

// Inverse of kappa_of_delta by bisection on the monotone map.
double delta_of_kappa(int d, double alpha, double kappa);

// Comparison factor H(t,r) = 1 + (t^{-1/alpha} r)^{-delta}.
double h_factor(double t, double r, double alpha, double delta);

struct HardyCoupling {
    int d;
    double alpha;
    double kappa;
    double delta;

    static HardyCoupling from_kappa(int d, double alpha, double kappa);
    static HardyCoupling from_delta(int d, double alpha, double delta);
};

} // namespace hk
