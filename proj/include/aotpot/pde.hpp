#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "aotpot/rng.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

// All solvers work on the periodic unit square, sampled at x_i = i/H,
// y_j = j/W. Fields are [H, W]; trajectories are frame-major [T, H, W] or
// [T, H, W, C] and exclude the initial condition.

enum class Family { heat, diffusion_reaction, ns_vorticity };

std::string to_string(Family family);
/// Throws std::invalid_argument listing the valid names.
Family parse_family(const std::string& name);
const std::vector<std::string>& family_names();
std::size_t family_channels(Family family);

/// FitzHugh-Nagumo reaction: scale * (u - u^3 - k - v, u - v).
struct FhnReaction {
  double k = 5e-3;
  double scale = 1.0;
};

/// Exact spectral heat flow: u_k(t + dt) = u_k(t) exp(-nu |k|^2 dt).
/// Returns [steps, H, W].
Tensor solve_heat(const Tensor& ic, double nu, double dt, std::size_t steps);

/// Two-species diffusion-reaction. Each step applies an explicit Euler
/// reaction update, then integrates diffusion exactly in Fourier space.
/// ic: [H, W, 2]; returns [steps, H, W, 2]. Throws BlowUpError when any
/// magnitude exceeds 1e6.
Tensor solve_dr(const Tensor& ic, std::array<double, 2> diffusion, const FhnReaction& reaction,
                double dt, std::size_t steps);

/// The standard forcing 0.1 (sin(2 pi (x + y)) + cos(2 pi (x + y))).
Tensor ns_forcing(std::size_t height, std::size_t width);

/// Pseudo-spectral vorticity form of 2-D incompressible Navier-Stokes:
/// w_t + u . grad w = nu lap w + f. Advection is evaluated in physical space
/// with 2/3 dealiasing and advanced with Heun's predictor-corrector;
/// diffusion uses Crank-Nicolson. `forcing` may be undefined (f = 0).
/// Saves every `save_every`-th step: returns [steps / save_every, H, W].
/// A non-zero-mean ic is projected to mean zero and a note is appended to
/// `warnings`.
Tensor solve_ns_vorticity(const Tensor& ic, double nu, const Tensor& forcing, double dt,
                          std::size_t steps, std::size_t save_every = 1,
                          std::vector<std::string>* warnings = nullptr);

/// Real field with spectrum (|k|^2 + tau^2)^(-alpha) over integer
/// wavenumbers, zero mean, unit standard deviation.
Tensor gaussian_random_field(std::size_t height, std::size_t width, Rng& rng, double alpha = 2.5,
                             double tau = 7.0);

/// Generation recipe for one family.
struct PdeFamilySpec {
  Family family = Family::heat;
  std::vector<double> viscosities{1e-2, 1e-3};  // heat / NS, cycled over trajectories
  std::array<double, 2> diffusion{1e-3, 5e-3};  // DR
  FhnReaction reaction;
  double dr_noise = 0.5;  // DR ic: fixed point + U(-dr_noise, dr_noise)
  std::size_t height = 32;
  std::size_t width = 32;
  double dt = 1e-2;             // internal step
  std::size_t frames = 40;      // saved frames per trajectory
  std::size_t save_every = 1;   // internal steps per saved frame
  bool forcing = true;          // NS only
  std::size_t train_count = 64;
  std::size_t test_count = 16;
  double weight = 1.0;          // balanced-sampling weight

  /// Desk-scale defaults for each family.
  static PdeFamilySpec defaults(Family family);
  void validate() const;
};

/// One trajectory with its provenance. `data` is [T, H, W, C]; `channels`
/// is the family's own channel count (the rest is padding).
struct Trajectory {
  Tensor data;
  std::string label;
  std::size_t channels = 0;
  double param = 0.0;  // viscosity for heat / NS; 0 for DR
  double weight = 1.0;

  std::size_t frames() const { return data.dim(0); }
};

/// Generates one trajectory of `spec` (unpadded) from its own seed.
Trajectory generate_trajectory(const PdeFamilySpec& spec, std::size_t index, std::uint64_t seed);

}  // namespace aotpot
