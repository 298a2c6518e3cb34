// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "spadcorr/config.hpp"
#include "spadcorr/correlator.hpp"
#include "spadcorr/epr.hpp"
#include "spadcorr/event_io.hpp"
#include "spadcorr/lm_fit.hpp"
#include "spadcorr/pipeline.hpp"
#include "spadcorr/snapshot_io.hpp"

using namespace spadcorr;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

double relative_error(double got, double want) { return std::abs(got / want - 1.0); }

// ---------------------------------------------------------------------------
// 1 + 2: closed loop on the default configuration

struct ClosedLoop {
  RunConfig cfg;
  PipelineResult result;
};

const ClosedLoop& closed_loop() {
  static const ClosedLoop run = [] {
    ClosedLoop c;
    c.cfg.workers = worker_count();
    c.cfg.frames = 20'000'000;
    c.result = run_pipeline(c.cfg);
    return c;
  }();
  return run;
}

Outcome criterion_closed_loop() {
  const auto& run = closed_loop();
  const auto& r = run.result.report;
  const TargetWidths t = run.cfg.targets;
  Outcome o;
  for (Method m : {Method::Gauss2D, Method::Peaks}) {
    for (auto [axis, name, pos, mom] : {std::tuple{&r.x, "x", t.delta_x_um, t.delta_qx_per_mm},
                                        std::tuple{&r.y, "y", t.delta_y_um, t.delta_qy_per_mm}}) {
      const auto& e = (*axis)[m];
      if (!e) {
        o.check(false, fmt("%s %s absent", to_string(m), name));
        continue;
      }
      const double ep = relative_error(e->delta_pos_um, pos);
      const double eq = relative_error(e->delta_mom_per_mm, mom);
      o.check(ep <= 0.15 && eq <= 0.15 && e->violated,
              fmt("%s %s: dpos %.2f um (%+.1f%%) dmom %.3f /mm (%+.1f%%) V %.3g", to_string(m), name, e->delta_pos_um,
                  100 * (e->delta_pos_um / pos - 1), e->delta_mom_per_mm, 100 * (e->delta_mom_per_mm / mom - 1),
                  e->v_min));
      if (axis == &r.x) {
        const double ratio = e->v_min / 2.2e-2;
        o.check(ratio <= 1.5 && ratio >= 1 / 1.5, fmt("%s Vx/2.2e-2 = %.3f", to_string(m), ratio));
      }
    }
  }
  return o;
}

Outcome criterion_method_ordering() {
  const auto& r = closed_loop().result.report;
  Outcome o;
  for (auto [axis, name] : {std::pair{&r.x, "x"}, std::pair{&r.y, "y"}}) {
    const auto& num = (*axis)[Method::Numerical];
    if (!num) {
      o.check(false, fmt("numerical %s absent", name));
      continue;
    }
    for (Method m : {Method::Gauss1D, Method::Gauss2D, Method::Peaks}) {
      const auto& e = (*axis)[m];
      if (!e) {
        o.check(false, fmt("%s %s absent", to_string(m), name));
        continue;
      }
      o.check(num->v_min >= e->v_min, fmt("%s: numerical %.3g >= %s %.3g", name, num->v_min, to_string(m), e->v_min));
    }
  }
  return o;
}

// ---------------------------------------------------------------------------
// 3: cross-talk estimator. Low efficiency keeps genuine near-axis pairs (which scale with
// efficiency squared) small against cross-talk (linear in efficiency).

Outcome criterion_crosstalk() {
  RunConfig cfg;
  cfg.sensor.efficiency = 0.05;
  cfg.pairs_per_frame = 2.0;
  cfg.crosstalk = CrosstalkSpec{{{1, 0, 1e-3}, {-1, 0, 1e-3}, {0, 1, 5e-4}, {0, -1, 5e-4}}};
  const auto setup = cfg.setup(MappingMode::FarField);
  const auto acc = simulate_and_accumulate(setup, 10'000'000, cfg.accumulator_params(), worker_count());
  const auto g2 = subtract_accidentals(normalize(acc), estimate_accidentals(acc, ShiftedWindow{}));
  const auto map = estimate_crosstalk(g2, normalized_g1(acc), 29);
  Outcome o;
  for (auto [dx, dy, p] : {std::tuple{1, 0, 1e-3}, {-1, 0, 1e-3}, {0, 1, 5e-4}, {0, -1, 5e-4}})
    o.check(relative_error(map.at(dx, dy), p) <= 0.2,
            fmt("p(%d,%d) = %.3e (injected %.1e, %+.1f%%)", dx, dy, map.at(dx, dy), p, 100 * (map.at(dx, dy) / p - 1)));
  double worst = 0.0;
  int wx = 0, wy = 0;
  for (int dy = -map.max_offset; dy <= map.max_offset; ++dy)
    for (int dx = -map.max_offset; dx <= map.max_offset; ++dx) {
      if (std::abs(dx) + std::abs(dy) == 1) continue;
      if (map.at(dx, dy) > worst) worst = map.at(dx, dy), wx = dx, wy = dy;
    }
  o.check(worst < 1e-4, fmt("largest estimate at non-injected offsets %.2e at (%d,%d)", worst, wx, wy));
  return o;
}

// ---------------------------------------------------------------------------
// 4: accidental subtraction on dark counts only

Outcome criterion_accidentals() {
  RunConfig cfg;
  cfg.pairs_per_frame = 0.0;
  cfg.sensor.dark_rate_hz = 20'000.0;
  cfg.crosstalk = {};
  const auto acc =
      simulate_and_accumulate(cfg.setup(MappingMode::FarField), 2'000'000, cfg.accumulator_params(), worker_count());
  const std::size_t n = acc.pixels();
  Outcome o;
  auto pooled = [&](const AccidentalMethod& method, const char* name) {
    const auto g = subtract_accidentals(normalize(acc), estimate_accidentals(acc, method));
    double sum = 0.0, var = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        sum += g.values[i * n + j];
        var += g.variance[i * n + j];
        ++count;
      }
    const double mean = sum / static_cast<double>(count);
    const double se = std::sqrt(var) / static_cast<double>(count);
    o.check(std::abs(mean) < 3 * se, fmt("%s: pooled mean %.3e, SE %.3e (%.2f SE)", name, mean, se, mean / se));
  };
  pooled(ShiftedWindow{}, "shifted window");
  pooled(G1Product{default_uncorrelated_mask(acc.shape(), MappingMode::FarField)}, "g1 product");
  return o;
}

// ---------------------------------------------------------------------------
// 5: temporal histogram

Outcome criterion_temporal() {
  Outcome o;
  // True pairs only: unit efficiency, no dark counts or cross-talk, rare pairs so that a
  // two-event frame is one pair with both photons detected.
  RunConfig cfg;
  cfg.sensor.efficiency = 1.0;
  cfg.sensor.dark_rate_hz = 0.0;
  cfg.crosstalk = {};
  cfg.pairs_per_frame = 0.002;
  for (MappingMode mode : {MappingMode::NearField, MappingMode::FarField}) {
    const auto frames = simulate_frames(cfg.setup(mode), 5'000'000, worker_count());
    std::uint64_t pairs = 0, inside = 0;
    for (const auto& f : frames) {
      if (f.events.size() != 2) continue;
      ++pairs;
      if (std::abs(f.events[0].tdc - f.events[1].tdc) <= cfg.correlate.window) ++inside;
    }
    const double frac = static_cast<double>(inside) / static_cast<double>(pairs);
    o.check(frac >= 0.99, fmt("%s: %.4f of %llu pair coincidences within the window",
                              mode == MappingMode::NearField ? "near" : "far", frac,
                              static_cast<unsigned long long>(pairs)));
  }

  // Shape of the default-run histogram: a peak at 0 over the triangular accidental floor
  // (B - |dt|), which is flat to within 5% across +-10 bins.
  const auto& acc = closed_loop().result.near_acc;
  const int b = acc.params().bins_per_frame;
  double num = 0.0, den = 0.0;
  for (int d = 20; d <= 200; ++d)
    for (int s : {-1, 1}) {
      num += static_cast<double>(acc.dt_count(s * d));
      den += b - d;
    }
  const double a = num / den;
  double chi2 = 0.0;
  int dof = 0;
  for (int d = 20; d <= 200; ++d)
    for (int s : {-1, 1}) {
      const double f = a * (b - d);
      const double r = static_cast<double>(acc.dt_count(s * d)) - f;
      chi2 += r * r / f;
      ++dof;
    }
  double peak = 0.0, shoulder = 0.0;
  for (int d = -10; d <= 10; ++d) peak += static_cast<double>(acc.dt_count(d)) - a * (b - std::abs(d));
  for (int d = 11; d <= 19; ++d)
    for (int s : {-1, 1}) shoulder += static_cast<double>(acc.dt_count(s * d)) - a * (b - d);
  int argmax = 0;
  for (int d = -(b - 1); d <= b - 1; ++d)
    if (acc.dt_count(d) > acc.dt_count(argmax)) argmax = d;
  bool symmetric = true;
  for (int d = 1; d < b; ++d) symmetric = symmetric && acc.dt_count(d) == acc.dt_count(-d);
  o.check(argmax == 0 && symmetric, fmt("maximum at dt = %d, symmetric %s", argmax, symmetric ? "yes" : "no"));
  o.check(peak > 100 * std::sqrt(a * b * 21), fmt("peak excess %.3g counts over floor", peak));
  o.check(std::abs(shoulder) < 0.01 * peak, fmt("excess in 11..19 bins %.2f%% of peak", 100 * shoulder / peak));
  o.check(chi2 / dof < 1.5, fmt("floor chi2/dof %.2f", chi2 / dof));
  return o;
}

// ---------------------------------------------------------------------------
// 6: fitter

template <class M>
double worst_jacobian_error(const M& model, const Eigen::VectorXd& p) {
  Eigen::MatrixXd j;
  model.jacobian(p, j);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(p[k]));
    Eigen::VectorXd lo = p, hi = p;
    lo[k] -= h;
    hi[k] += h;
    Eigen::VectorXd flo, fhi;
    model.evaluate(lo, flo);
    model.evaluate(hi, fhi);
    const Eigen::VectorXd fd = (fhi - flo) / (2 * h);
    const double scale = std::max(1e-3, fd.cwiseAbs().maxCoeff());
    worst = std::max(worst, (j.col(k) - fd).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

Outcome criterion_fitter() {
  Outcome o;
  std::vector<double> x, y, w;
  for (double v = -10; v <= 16; v += 0.5) {
    x.push_back(v);
    y.push_back(2.0 * std::exp(-0.5 * (v - 3) * (v - 3) / 4.0));
    w.push_back(1.0);
  }
  const auto f1 = fit_gaussian_1d(x, y, w);
  const double e1 = std::max({std::abs(f1.amplitude - 2), std::abs(f1.center - 3), std::abs(f1.sigma - 2),
                              std::abs(f1.offset)});
  o.check(f1.converged && e1 < 1e-6, fmt("1D noiseless max parameter error %.1e", e1));

  std::vector<double> as, bs, z, wz;
  for (int a = 0; a < 32; ++a)
    for (int b = 0; b < 32; ++b) {
      const double up = ((a - 15.5) + (b - 16.2)) / std::numbers::sqrt2;
      const double um = ((a - 15.5) - (b - 16.2)) / std::numbers::sqrt2;
      as.push_back(a);
      bs.push_back(b);
      z.push_back(100.0 * std::exp(-0.5 * up * up / 4.0 - 0.5 * um * um / 36.0));
      wz.push_back(1.0);
    }
  const auto f2 = fit_gaussian_2d(as, bs, z, wz);
  const double e2 = std::max({std::abs(f2.amplitude - 100), std::abs(f2.center - 15.5), std::abs(f2.center_b - 16.2),
                              std::abs(f2.sigma_plus - 2), std::abs(f2.sigma_minus - 6), std::abs(f2.offset)});
  o.check(f2.converged && e2 < 1e-6, fmt("2D noiseless max parameter error %.1e", e2));

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pos(0.5, 4.0), ctr(-3.0, 3.0), ctr2(8.0, 24.0);
  double worst1 = 0.0, worst2 = 0.0;
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd p(4);
    p << pos(rng), ctr(rng), pos(rng), ctr(rng);
    worst1 = std::max(worst1, worst_jacobian_error(Gaussian1DModel{x}, p));
    Eigen::VectorXd q(6);
    q << pos(rng), ctr2(rng), ctr2(rng), 1.0 + pos(rng), 1.0 + pos(rng), ctr(rng);
    worst2 = std::max(worst2, worst_jacobian_error(Gaussian2DModel{as, bs}, q));
  }
  o.check(worst1 < 1e-6, fmt("1D Jacobian vs finite differences, worst %.1e over 100 points", worst1));
  o.check(worst2 < 1e-6, fmt("2D Jacobian vs finite differences, worst %.1e over 100 points", worst2));
  return o;
}

// ---------------------------------------------------------------------------
// 7: oracle equivalence

Outcome criterion_oracles() {
  Outcome o;
  std::mt19937_64 rng(7);
  std::vector<Frame> frames;
  for (std::uint32_t id = 0; id < 100; ++id) {
    std::vector<int> pix(1024);
    for (int i = 0; i < 1024; ++i) pix[static_cast<std::size_t>(i)] = i + 1;
    std::shuffle(pix.begin(), pix.end(), rng);
    const auto n = static_cast<std::size_t>(rng() % 150);
    Frame f{id, {}};
    for (std::size_t i = 0; i < n; ++i) f.events.push_back({pixel_from_linear(pix[i]), static_cast<int>(rng() % 255)});
    frames.push_back(std::move(f));
  }
  AccumulatorParams params;
  const auto acc = accumulate(frames, params, 4);
  std::vector<std::uint64_t> g2(1024 * 1024, 0), g2s(1024 * 1024, 0), g1(1024, 0), dt(509, 0);
  for (const auto& f : frames)
    for (std::size_t i = 0; i < f.events.size(); ++i) {
      const int li = (f.events[i].pixel.y - 1) * 32 + f.events[i].pixel.x - 1;
      ++g1[static_cast<std::size_t>(li)];
      for (std::size_t j = 0; j < f.events.size(); ++j) {
        if (i == j) continue;
        const int lj = (f.events[j].pixel.y - 1) * 32 + f.events[j].pixel.x - 1;
        const int d = f.events[i].tdc - f.events[j].tdc;
        ++dt[static_cast<std::size_t>(d + 254)];
        const auto k = static_cast<std::size_t>(li) * 1024 + static_cast<std::size_t>(lj);
        if (std::abs(d) <= params.window) ++g2[k];
        if (std::abs(std::abs(d) - params.shift) <= params.window) ++g2s[k];
      }
    }
  const bool same = g2 == acc.g2_counts() && g2s == acc.g2_shifted_counts() && g1 == acc.g1_counts() &&
                    dt == acc.dt_histogram() && acc.n_frames() == 100;
  std::uint64_t total = 0;
  for (auto c : g2) total += c;
  o.check(same, fmt("accumulate on 100 random frames equals the reference (%llu coincidence increments)",
                    static_cast<unsigned long long>(total)));

  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    CorrectedG2 g;
    g.values.assign(1024 * 1024, 0.0);
    g.variance.assign(1024 * 1024, 0.0);
    g.masked.assign(1024 * 1024, 0);
    std::normal_distribution<double> val(0.0, 3.0);
    for (int k = 0; k < 50'000; ++k) g.values[rng() % g.values.size()] = val(rng);
    const auto ax = project_axes(g);
    const auto sd = project_sum_diff(g);
    std::vector<double> px(32 * 32, 0.0), py(32 * 32, 0.0), pp(63 * 63, 0.0), pm(63 * 63, 0.0);
    for (int x1 = 1; x1 <= 32; ++x1)
      for (int y1 = 1; y1 <= 32; ++y1)
        for (int x2 = 1; x2 <= 32; ++x2)
          for (int y2 = 1; y2 <= 32; ++y2) {
            const double v = g.values[static_cast<std::size_t>((y1 - 1) * 32 + x1 - 1) * 1024 +
                                      static_cast<std::size_t>((y2 - 1) * 32 + x2 - 1)];
            px[static_cast<std::size_t>((x1 - 1) * 32 + x2 - 1)] += v;
            py[static_cast<std::size_t>((y1 - 1) * 32 + y2 - 1)] += v;
            pp[static_cast<std::size_t>((x1 + x2 - 2) * 63 + (y1 + y2 - 2))] += v;
            pm[static_cast<std::size_t>((x1 - x2 + 31) * 63 + (y1 - y2 + 31))] += v;
          }
    for (std::size_t k = 0; k < px.size(); ++k)
      worst = std::max({worst, std::abs(px[k] - ax.x.values[k]), std::abs(py[k] - ax.y.values[k])});
    for (std::size_t k = 0; k < pp.size(); ++k)
      worst = std::max({worst, std::abs(pp[k] - sd.plus.values[k]), std::abs(pm[k] - sd.minus.values[k])});
  }
  o.check(worst < 1e-9, fmt("projections vs quadruple loops on 3 random tensors, worst difference %.1e", worst));
  return o;
}

// ---------------------------------------------------------------------------
// 8: parallel determinism

Outcome criterion_parallel() {
  Outcome o;
  RunConfig cfg;
  for (MappingMode mode : {MappingMode::NearField, MappingMode::FarField}) {
    const auto setup = cfg.setup(mode);
    std::string evt[2], snap[2], resnap[2];
    const unsigned workers[2] = {1, 8};
    for (int k = 0; k < 2; ++k) {
      std::ostringstream os;
      EventWriter w(os, header_for(setup.sensor, mode));
      CorrelationAccumulator acc(cfg.accumulator_params());
      simulate_stream(setup, 1'000'000, workers[k], &w, &acc);
      evt[k] = os.str();
      std::ostringstream s;
      write_accumulator(s, acc);
      snap[k] = s.str();
      std::istringstream is(evt[k]);
      std::ostringstream s2;
      write_accumulator(s2, correlate_stream(is, cfg.accumulator_params(), workers[k]).acc);
      resnap[k] = s2.str();
    }
    const char* name = mode == MappingMode::NearField ? "near" : "far";
    o.check(evt[0] == evt[1], fmt("%s event files identical (%zu bytes)", name, evt[0].size()));
    o.check(snap[0] == snap[1] && resnap[0] == resnap[1] && snap[0] == resnap[0],
            fmt("%s accumulator snapshots identical (%zu bytes)", name, snap[0].size()));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 9: IO round trips and header fuzz

Outcome criterion_io() {
  Outcome o;
  std::mt19937_64 rng(9);
  int ok = 0;
  for (int t = 0; t < 1000; ++t) {
    EventFileHeader h;
    h.mapping = static_cast<MappingMode>(rng() % 3);
    std::vector<Frame> frames;
    std::uint32_t id = 0;
    const auto n = rng() % 100;
    for (std::uint64_t i = 0; i < n; ++i) {
      id += static_cast<std::uint32_t>(1 + rng() % 5);
      Frame f{id, {}};
      const auto k = rng() % 8;
      std::vector<int> used;
      for (std::uint64_t e = 0; e < k; ++e) {
        const int p = 1 + static_cast<int>(rng() % 1024);
        if (std::find(used.begin(), used.end(), p) != used.end()) continue;
        used.push_back(p);
        f.events.push_back({pixel_from_linear(p), static_cast<int>(rng() % 255)});
      }
      frames.push_back(std::move(f));
    }
    const std::uint64_t total = id + 1 + rng() % 3;
    std::ostringstream os;
    write_events(frames, h, os, total);
    std::istringstream is(os.str());
    const auto back = read_events(is);
    std::vector<Frame> stored;
    for (const auto& f : back.frames)
      if (!f.events.empty() || std::any_of(frames.begin(), frames.end(), [&](const Frame& g) { return g.frame_id == f.frame_id; }))
        stored.push_back(f);
    std::ostringstream again;
    write_events(back.frames, back.header, again, total);
    bool same = back.header == h && back.frames.size() == total && again.str() == os.str();
    for (const auto& f : frames) same = same && back.frames[f.frame_id] == f;
    ok += same;
  }
  o.check(ok == 1000, fmt("%d / 1000 random streams round-trip bit-exactly", ok));

  std::ostringstream os;
  EventFileHeader h;
  h.mapping = MappingMode::NearField;
  write_events({}, h, os, 0);
  const std::string good = os.str();
  int rejected = 0, tried = 0;
  for (std::size_t i = 0; i < kEventHeaderBytes; ++i)
    for (int x = 1; x < 256; ++x) {
      std::string m = good;
      m[i] = static_cast<char>(static_cast<unsigned char>(m[i]) ^ x);
      ++tried;
      try {
        std::istringstream is(m);
        EventReader r(is);
      } catch (const Error&) {
        ++rejected;
      }
    }
  o.check(rejected == tried, fmt("%d / %d single-byte header mutations rejected", rejected, tried));
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 closed-loop EPR recovery", criterion_closed_loop},
      {"2 method ordering", criterion_method_ordering},
      {"3 cross-talk estimator", criterion_crosstalk},
      {"4 accidental subtraction", criterion_accidentals},
      {"5 temporal histogram", criterion_temporal},
      {"6 fitter correctness", criterion_fitter},
      {"7 oracle equivalence", criterion_oracles},
      {"8 parallel determinism", criterion_parallel},
      {"9 IO round trip", criterion_io},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %s (%.0f s): %s\n", o.pass ? "PASS" : "FAIL", name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
