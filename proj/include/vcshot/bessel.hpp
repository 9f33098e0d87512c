#pragma once

namespace vcshot {

// log I_nu(x) for nu >= 0, x > 0, without forming I_nu(x) itself, so it
// stays finite where I_nu overflows (x in the thousands) or underflows
// (large nu, small x). Relative accuracy of the log is ~1e-12 or better.
//
// Regions:
//   nu >= 20            uniform asymptotic (Debye) expansion, 10 terms
//   x > 25 + nu*nu/2    large-argument Hankel expansion
//   otherwise           ascending power series, summed with rescaling
double log_bessel_i(double nu, double x);

}  // namespace vcshot
