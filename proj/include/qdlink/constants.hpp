#pragma once

#include <numbers>

namespace qdlink::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// Reduced Planck constant in ueV*ns, so delta_ueV * t_ns / hbar is a phase.
inline constexpr double hbar_uev_ns = 0.6582119569;
// Planck constant in ueV*ns; the FSS beat period is h / delta.
inline constexpr double h_uev_ns = 4.135667696;
// h*c in ueV*nm for wavelength <-> photon energy.
inline constexpr double hc_uev_nm = 1239.841984e6;

inline constexpr double ps_per_ns = 1e3;
inline constexpr double ps_per_s = 1e12;

// Gaussian FWHM = 2 sqrt(2 ln 2) sigma.
inline constexpr double fwhm_per_sigma = 2.3548200450309493;

inline constexpr double deg = std::numbers::pi / 180.0;

}  // namespace qdlink::constants
