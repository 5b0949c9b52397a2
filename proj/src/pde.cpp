#include "aotpot/pde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "aotpot/errors.hpp"
#include "aotpot/fft.hpp"

namespace aotpot {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kBlowUpBound = 1e6;

void require_grid(std::size_t h, std::size_t w, const char* who) {
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw UnsupportedSizeError(std::string(who) + ": grid " + std::to_string(h) + "x" +
                               std::to_string(w) + " is not a power of two");
  }
}

/// Angular wavenumbers of one axis: Laplacian uses the full set, first
/// derivatives drop the Nyquist bin so real fields stay real.
struct Axis {
  std::vector<double> k;
  std::vector<double> kd;
  std::vector<bool> keep;  // 2/3 dealiasing
  explicit Axis(std::size_t n) : k(n), kd(n), keep(n) {
    for (std::size_t i = 0; i < n; ++i) {
      const long f = signed_frequency(i, n);
      k[i] = kTwoPi * static_cast<double>(f);
      kd[i] = (n > 1 && 2 * i == n) ? 0.0 : k[i];
      keep[i] = 3 * static_cast<std::size_t>(std::labs(f)) <= n;
    }
  }
};

std::vector<cplx> to_complex(std::span<const double> v) {
  return std::vector<cplx>(v.begin(), v.end());
}

void check_bound(std::span<const double> v, std::size_t step, const char* who) {
  for (double x : v) {
    if (!std::isfinite(x) || std::abs(x) > kBlowUpBound) {
      std::ostringstream os;
      os << who << ": field magnitude exceeded " << kBlowUpBound << " at step " << step;
      throw BlowUpError(os.str(), step);
    }
  }
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::heat:
      return "heat";
    case Family::diffusion_reaction:
      return "diffusion_reaction";
    case Family::ns_vorticity:
      return "ns_vorticity";
  }
  return "heat";
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"heat", "diffusion_reaction", "ns_vorticity"};
  return names;
}

Family parse_family(const std::string& name) {
  if (name == "heat") return Family::heat;
  if (name == "diffusion_reaction" || name == "dr") return Family::diffusion_reaction;
  if (name == "ns_vorticity" || name == "ns") return Family::ns_vorticity;
  std::string valid;
  for (const auto& n : family_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown PDE family '" + name + "' (valid: " + valid + ")");
}

std::size_t family_channels(Family family) {
  return family == Family::diffusion_reaction ? 2 : 1;
}

Tensor solve_heat(const Tensor& ic, double nu, double dt, std::size_t steps) {
  if (!(nu > 0.0)) throw std::invalid_argument("solve_heat: viscosity must be > 0");
  if (ic.rank() != 2) throw DimensionError("solve_heat: ic must be [H,W], got " + shape_str(ic.shape()));
  const std::size_t h = ic.dim(0), w = ic.dim(1), plane = h * w;
  require_grid(h, w, "solve_heat");
  const Axis ax(h), ay(w);

  std::vector<cplx> spec = to_complex(ic.values());
  fft2d(spec, 1, h, w, false);
  std::vector<double> decay(plane);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      decay[i * w + j] = std::exp(-nu * (ax.k[i] * ax.k[i] + ay.k[j] * ay.k[j]) * dt);
    }
  }
  Tensor out({steps, h, w});
  std::vector<cplx> field(plane);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t m = 0; m < plane; ++m) spec[m] *= decay[m];
    field = spec;
    fft2d(field, 1, h, w, true);
    for (std::size_t m = 0; m < plane; ++m) out.values()[s * plane + m] = field[m].real();
  }
  return out;
}

Tensor solve_dr(const Tensor& ic, std::array<double, 2> diffusion, const FhnReaction& reaction,
                double dt, std::size_t steps) {
  if (ic.rank() != 3 || ic.dim(2) != 2) {
    throw DimensionError("solve_dr: ic must be [H,W,2], got " + shape_str(ic.shape()));
  }
  if (diffusion[0] < 0.0 || diffusion[1] < 0.0) throw std::invalid_argument("solve_dr: D must be >= 0");
  const std::size_t h = ic.dim(0), w = ic.dim(1), plane = h * w;
  require_grid(h, w, "solve_dr");
  const Axis ax(h), ay(w);

  std::array<std::vector<double>, 2> decay;
  for (std::size_t c = 0; c < 2; ++c) {
    decay[c].resize(plane);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        decay[c][i * w + j] =
            std::exp(-diffusion[c] * (ax.k[i] * ax.k[i] + ay.k[j] * ay.k[j]) * dt);
      }
    }
  }
  std::vector<double> u(plane), v(plane);
  for (std::size_t m = 0; m < plane; ++m) {
    u[m] = ic.at(2 * m);
    v[m] = ic.at(2 * m + 1);
  }
  Tensor out({steps, h, w, 2});
  std::vector<cplx> buf(2 * plane);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t m = 0; m < plane; ++m) {
      const double a = u[m], b = v[m];
      buf[m] = a + dt * reaction.scale * (a - a * a * a - reaction.k - b);
      buf[plane + m] = b + dt * reaction.scale * (a - b);
    }
    fft2d(buf, 2, h, w, false);
    for (std::size_t m = 0; m < plane; ++m) {
      buf[m] *= decay[0][m];
      buf[plane + m] *= decay[1][m];
    }
    fft2d(buf, 2, h, w, true);
    auto frame = out.values().subspan(s * 2 * plane, 2 * plane);
    for (std::size_t m = 0; m < plane; ++m) {
      u[m] = buf[m].real();
      v[m] = buf[plane + m].real();
      frame[2 * m] = u[m];
      frame[2 * m + 1] = v[m];
    }
    check_bound(frame, s + 1, "solve_dr");
  }
  return out;
}

Tensor ns_forcing(std::size_t height, std::size_t width) {
  Tensor f({height, width});
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const double phase = kTwoPi * (static_cast<double>(i) / static_cast<double>(height) +
                                     static_cast<double>(j) / static_cast<double>(width));
      f.values()[i * width + j] = 0.1 * (std::sin(phase) + std::cos(phase));
    }
  }
  return f;
}

Tensor solve_ns_vorticity(const Tensor& ic, double nu, const Tensor& forcing, double dt,
                          std::size_t steps, std::size_t save_every,
                          std::vector<std::string>* warnings) {
  if (ic.rank() != 2) throw DimensionError("solve_ns: ic must be [H,W], got " + shape_str(ic.shape()));
  if (nu < 0.0) throw std::invalid_argument("solve_ns: viscosity must be >= 0");
  if (save_every == 0 || steps % save_every != 0) {
    throw std::invalid_argument("solve_ns: steps must be a positive multiple of save_every");
  }
  const std::size_t h = ic.dim(0), w = ic.dim(1), plane = h * w;
  require_grid(h, w, "solve_ns");
  if (forcing.defined() && forcing.shape() != ic.shape()) {
    throw DimensionError("solve_ns: forcing shape " + shape_str(forcing.shape()) +
                         " does not match ic " + shape_str(ic.shape()));
  }
  const Axis ax(h), ay(w);

  std::vector<cplx> what = to_complex(ic.values());
  fft2d(what, 1, h, w, false);
  const double mean = what[0].real() / static_cast<double>(plane);
  if (std::abs(mean) > 1e-12) {
    if (warnings) {
      std::ostringstream os;
      os << "solve_ns: initial vorticity had mean " << mean << "; projected to zero mean";
      warnings->push_back(os.str());
    }
  }
  what[0] = 0.0;

  std::vector<cplx> fhat(plane, 0.0);
  if (forcing.defined()) {
    fhat = to_complex(forcing.values());
    fft2d(fhat, 1, h, w, false);
    fhat[0] = 0.0;
  }

  std::vector<double> k2(plane), half_nu(plane);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t m = i * w + j;
      k2[m] = ax.k[i] * ax.k[i] + ay.k[j] * ay.k[j];
      half_nu[m] = 0.5 * nu * k2[m] * dt;
    }
  }

  std::vector<cplx> work(4 * plane), adv(plane);
  const cplx I(0.0, 1.0);
  // Dealiased spectrum of u . grad w, with u = (psi_y, -psi_x) and
  // -lap psi = w.
  auto advection = [&](const std::vector<cplx>& s, std::vector<cplx>& out) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t m = i * w + j;
        const cplx psi = k2[m] > 0.0 ? s[m] / k2[m] : cplx(0.0);
        work[m] = I * ay.kd[j] * psi;               // u
        work[plane + m] = -I * ax.kd[i] * psi;      // v
        work[2 * plane + m] = I * ax.kd[i] * s[m];  // w_x
        work[3 * plane + m] = I * ay.kd[j] * s[m];  // w_y
      }
    }
    fft2d(work, 4, h, w, true);
    for (std::size_t m = 0; m < plane; ++m) {
      out[m] = work[m].real() * work[2 * plane + m].real() +
               work[plane + m].real() * work[3 * plane + m].real();
    }
    fft2d(out, 1, h, w, false);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        if (!ax.keep[i] || !ay.keep[j]) out[i * w + j] = 0.0;
      }
    }
    out[0] = 0.0;
  };

  std::vector<cplx> rhs0(plane), predicted(plane), field(plane);
  Tensor out({steps / save_every, h, w});
  for (std::size_t s = 0; s < steps; ++s) {
    advection(what, adv);
    for (std::size_t m = 0; m < plane; ++m) {
      rhs0[m] = fhat[m] - adv[m];
      predicted[m] = ((1.0 - half_nu[m]) * what[m] + dt * rhs0[m]) / (1.0 + half_nu[m]);
    }
    advection(predicted, adv);
    for (std::size_t m = 0; m < plane; ++m) {
      const cplx rhs = 0.5 * (rhs0[m] + fhat[m] - adv[m]);
      what[m] = ((1.0 - half_nu[m]) * what[m] + dt * rhs) / (1.0 + half_nu[m]);
    }
    if ((s + 1) % save_every == 0) {
      field = what;
      fft2d(field, 1, h, w, true);
      auto frame = out.values().subspan(((s + 1) / save_every - 1) * plane, plane);
      for (std::size_t m = 0; m < plane; ++m) frame[m] = field[m].real();
      check_bound(frame, s + 1, "solve_ns");
    }
  }
  return out;
}

Tensor gaussian_random_field(std::size_t height, std::size_t width, Rng& rng, double alpha,
                             double tau) {
  require_grid(height, width, "gaussian_random_field");
  const std::size_t plane = height * width;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<cplx> spec(plane);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const double fi = static_cast<double>(signed_frequency(i, height));
      const double fj = static_cast<double>(signed_frequency(j, width));
      const double amp = std::pow(fi * fi + fj * fj + tau * tau, -alpha);
      const double re = gauss(rng);
      const double im = gauss(rng);
      spec[i * width + j] = cplx(re, im) * amp;
    }
  }
  spec[0] = 0.0;
  fft2d(spec, 1, height, width, true);
  Tensor out({height, width});
  double mean = 0.0;
  for (std::size_t m = 0; m < plane; ++m) mean += spec[m].real();
  mean /= static_cast<double>(plane);
  double var = 0.0;
  for (std::size_t m = 0; m < plane; ++m) {
    const double v = spec[m].real() - mean;
    out.values()[m] = v;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(plane));
  if (sd > 0.0) {
    for (auto& v : out.values()) v /= sd;
  }
  return out;
}

PdeFamilySpec PdeFamilySpec::defaults(Family family) {
  PdeFamilySpec spec;
  spec.family = family;
  if (family == Family::ns_vorticity) {
    spec.dt = 1e-3;
    spec.save_every = 100;
  }
  return spec;
}

void PdeFamilySpec::validate() const {
  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument(to_string(family) + " spec: " + msg);
  };
  if (!is_power_of_two(height) || !is_power_of_two(width)) fail("grid must be a power of two");
  if (!(dt > 0.0) || frames == 0 || save_every == 0) fail("dt, frames and save_every must be positive");
  if (family != Family::diffusion_reaction) {
    if (viscosities.empty()) fail("no viscosities given");
    for (double nu : viscosities) {
      if (!(nu > 0.0) || !std::isfinite(nu)) fail("viscosity must be finite and > 0");
    }
  } else if (diffusion[0] < 0.0 || diffusion[1] < 0.0) {
    fail("diffusion coefficients must be >= 0");
  }
  if (!(weight >= 0.0)) fail("weight must be >= 0");
}

Trajectory generate_trajectory(const PdeFamilySpec& spec, std::size_t index, std::uint64_t seed) {
  spec.validate();
  Rng rng = SeedSplitter(seed).stream("data/" + to_string(spec.family) + "/" + std::to_string(index));
  const std::size_t h = spec.height, w = spec.width;
  Trajectory traj;
  traj.label = to_string(spec.family);
  traj.channels = family_channels(spec.family);
  traj.weight = spec.weight;
  const std::size_t steps = spec.frames * spec.save_every;

  switch (spec.family) {
    case Family::heat: {
      traj.param = spec.viscosities[index % spec.viscosities.size()];
      Tensor ic = gaussian_random_field(h, w, rng);
      Tensor frames = solve_heat(ic, traj.param, spec.dt * static_cast<double>(spec.save_every),
                                 spec.frames);
      traj.data = reshape(frames, {spec.frames, h, w, 1});
      break;
    }
    case Family::diffusion_reaction: {
      const double fixed = -std::cbrt(spec.reaction.k);
      std::uniform_real_distribution<double> noise(-spec.dr_noise, spec.dr_noise);
      Tensor ic({h, w, 2});
      for (auto& v : ic.values()) v = fixed + noise(rng);
      Tensor all = solve_dr(ic, spec.diffusion, spec.reaction, spec.dt, steps);
      Tensor saved({spec.frames, h, w, 2});
      const std::size_t frame = h * w * 2;
      for (std::size_t f = 0; f < spec.frames; ++f) {
        auto src = all.values().subspan(((f + 1) * spec.save_every - 1) * frame, frame);
        std::copy(src.begin(), src.end(), saved.values().begin() + static_cast<long>(f * frame));
      }
      traj.data = saved;
      break;
    }
    case Family::ns_vorticity: {
      traj.param = spec.viscosities[index % spec.viscosities.size()];
      Tensor ic = gaussian_random_field(h, w, rng);
      Tensor f = spec.forcing ? ns_forcing(h, w) : Tensor();
      Tensor frames = solve_ns_vorticity(ic, traj.param, f, spec.dt, steps, spec.save_every);
      traj.data = reshape(frames, {spec.frames, h, w, 1});
      break;
    }
  }
  return traj;
}

}  // namespace aotpot
