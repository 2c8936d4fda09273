#include "maeloc/multilat/multilat.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "maeloc/error.hpp"

namespace maeloc::multilat {
namespace {

struct Problem {
  std::span<const Vec3> mics;
  std::span<const TdoaMeasurement> meas;
  double c;

  double evaluate(const Vec3& x, Eigen::MatrixX3d* jac, Eigen::VectorXd& res) const {
    res.resize(static_cast<Eigen::Index>(meas.size()));
    if (jac) jac->resize(static_cast<Eigen::Index>(meas.size()), 3);
    for (std::size_t k = 0; k < meas.size(); ++k) {
      const auto& m = meas[k];
      const Vec3 dj = x - mics[static_cast<std::size_t>(m.j)];
      const Vec3 di = x - mics[static_cast<std::size_t>(m.i)];
      const double nj = std::max(dj.norm(), 1e-12), ni = std::max(di.norm(), 1e-12);
      res[static_cast<Eigen::Index>(k)] = nj - ni - c * m.delay;
      if (jac) jac->row(static_cast<Eigen::Index>(k)) = (dj / nj - di / ni).transpose();
    }
    return res.squaredNorm();
  }
};

void check_indices(std::span<const Vec3> mics, std::span<const TdoaMeasurement> meas) {
  for (const auto& m : meas) {
    if (m.i == m.j) throw InvalidArgument("measurement pairs a microphone with itself");
    if (m.i < 0 || m.j < 0 || static_cast<std::size_t>(m.i) >= mics.size() ||
        static_cast<std::size_t>(m.j) >= mics.size())
      throw InvalidArgument("measurement references an unknown microphone");
  }
}

std::size_t distinct_mics(std::span<const TdoaMeasurement> meas) {
  std::set<int> ids;
  for (const auto& m : meas) {
    ids.insert(m.i);
    ids.insert(m.j);
  }
  return ids.size();
}

int find_root(std::vector<int>& parent, int a) {
  while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)];
  return a;
}

// Four pairs forming a spanning tree over five distinct microphones.
bool is_minimal_tree(const PeakCandidates& cand, const std::vector<std::size_t>& pick,
                     std::size_t num_mics) {
  std::set<int> ids;
  std::vector<int> parent(num_mics);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t p : pick) {
    const auto& m = cand[p].front();
    ids.insert(m.i);
    ids.insert(m.j);
    const int a = find_root(parent, m.i), b = find_root(parent, m.j);
    if (a == b) return false;
    parent[static_cast<std::size_t>(a)] = b;
  }
  return ids.size() == 5;
}

}  // namespace

std::vector<TdoaMeasurement> extract_peaks(const signal::CorrelationVector& r, int k,
                                           int sample_rate, int i, int j) {
  if (k < 1) throw InvalidArgument("extract_peaks: k must be >= 1");
  if (sample_rate <= 0) throw InvalidArgument("extract_peaks: bad sample rate");
  const auto& v = r.values;
  const std::size_t n = v.size();
  if (n == 0) throw InvalidArgument("extract_peaks: empty correlation");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == *hi) return {TdoaMeasurement{i, j, 0.0, 0.0}};

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> peaks;
  for (std::size_t t = 0; t < n; ++t) {
    const double left = t > 0 ? v[t - 1] : kNegInf;
    const double right = t + 1 < n ? v[t + 1] : kNegInf;
    if (v[t] > left && v[t] >= right) peaks.push_back(t);
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [&v](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  if (peaks.size() > static_cast<std::size_t>(k)) peaks.resize(static_cast<std::size_t>(k));

  std::vector<TdoaMeasurement> out;
  for (std::size_t t : peaks) {
    double offset = 0.0;
    if (t > 0 && t + 1 < n) {
      const double ym = v[t - 1], y0 = v[t], yp = v[t + 1];
      const double denom = ym - 2.0 * y0 + yp;
      if (denom < 0.0) offset = std::clamp(0.5 * (ym - yp) / denom, -0.5, 0.5);
    }
    const double lag = static_cast<double>(static_cast<long>(t) - r.tau) + offset;
    out.push_back({i, j, lag / sample_rate, v[t]});
  }
  return out;
}

Vec3 centroid(std::span<const Vec3> points) {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

double tdoa_residual(std::span<const Vec3> mic_pos, const TdoaMeasurement& m, const Vec3& x,
                     double speed_of_sound) {
  return (x - mic_pos[static_cast<std::size_t>(m.j)]).norm() -
         (x - mic_pos[static_cast<std::size_t>(m.i)]).norm() - speed_of_sound * m.delay;
}

LocalizationResult solve_tdoa_ls(std::span<const Vec3> mic_pos,
                                 std::span<const TdoaMeasurement> measurements, const Vec3& init,
                                 const SolverOptions& options) {
  check_indices(mic_pos, measurements);
  if (distinct_mics(measurements) < 5)
    throw InsufficientMeasurements(
        "multilateration needs measurements over at least five microphones");

  const Problem prob{mic_pos, measurements, options.speed_of_sound};
  LocalizationResult out;
  out.inliers = static_cast<int>(measurements.size());
  Vec3 x = init;
  Eigen::MatrixX3d jac;
  Eigen::VectorXd res, trial_res;
  double cost = prob.evaluate(x, &jac, res);
  double lambda = options.initial_damping;

  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    const Vec3 grad = jac.transpose() * res;
    if (grad.norm() < options.gradient_tolerance) {
      out.converged = true;
      break;
    }
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    bool accepted = false;
    bool tiny_step = false;
    while (!accepted) {
      Eigen::Matrix3d damped = jtj;
      damped.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
      const Vec3 step = damped.ldlt().solve(-grad);
      if (!step.allFinite()) {
        lambda *= 10.0;
        if (lambda > 1e16) break;
        continue;
      }
      if (step.norm() < options.step_tolerance) {
        tiny_step = true;
        break;
      }
      const Vec3 trial = x + step;
      const double trial_cost = prob.evaluate(trial, nullptr, trial_res);
      if (trial_cost < cost) {
        x = trial;
        cost = prob.evaluate(x, &jac, res);
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) break;
      }
    }
    if (tiny_step) {
      out.converged = true;
      break;
    }
    if (!accepted) break;
  }
  out.position = x;
  out.residual_rms = std::sqrt(cost / static_cast<double>(std::max<std::size_t>(1, res.size())));
  return out;
}

std::vector<TdoaMeasurement> top_candidates(const PeakCandidates& candidates) {
  std::vector<TdoaMeasurement> out;
  for (const auto& list : candidates)
    if (!list.empty()) out.push_back(list.front());
  return out;
}

LocalizationResult ransac_localize(std::span<const Vec3> mic_pos, const PeakCandidates& candidates,
                                   const RansacConfig& config) {
  std::vector<std::size_t> usable;
  for (std::size_t p = 0; p < candidates.size(); ++p) {
    if (candidates[p].empty()) continue;
    check_indices(mic_pos, candidates[p]);
    usable.push_back(p);
  }
  {
    std::set<int> ids;
    for (std::size_t p : usable) {
      ids.insert(candidates[p].front().i);
      ids.insert(candidates[p].front().j);
    }
    if (ids.size() < 5)
      throw InsufficientMeasurements("RANSAC needs pairs over at least five microphones");
  }

  const double c = config.solver.speed_of_sound;
  const Vec3 init = centroid(mic_pos);
  std::mt19937_64 rng(config.seed);

  auto score_position = [&](const Vec3& x, std::vector<TdoaMeasurement>* inliers) {
    int count = 0;
    for (std::size_t p : usable) {
      const TdoaMeasurement* best = nullptr;
      double best_abs = std::numeric_limits<double>::infinity();
      for (const auto& m : candidates[p]) {
        const double r = std::abs(tdoa_residual(mic_pos, m, x, c));
        if (r < best_abs) {
          best_abs = r;
          best = &m;
        }
      }
      if (best_abs < config.inlier_threshold) {
        ++count;
        if (inliers) inliers->push_back(*best);
      }
    }
    return count;
  };

  int best_count = -1;
  Vec3 best_pos = init;
  std::vector<std::size_t> pick(4);
  for (int h = 0; h < config.max_hypotheses; ++h) {
    bool found = false;
    for (int attempt = 0; attempt < 200 && !found; ++attempt) {
      std::vector<std::size_t> pool = usable;
      for (std::size_t s = 0; s < 4 && s < pool.size(); ++s) {
        std::uniform_int_distribution<std::size_t> d(s, pool.size() - 1);
        std::swap(pool[s], pool[d(rng)]);
        pick[s] = pool[s];
      }
      found = pool.size() >= 4 && is_minimal_tree(candidates, pick, mic_pos.size());
    }
    if (!found) continue;

    std::vector<TdoaMeasurement> subset;
    for (std::size_t p : pick) {
      const auto& list = candidates[p];
      std::vector<double> w;
      double total = 0.0;
      for (const auto& m : list) {
        w.push_back(std::max(m.score, 0.0));
        total += w.back();
      }
      if (total <= 0.0) std::fill(w.begin(), w.end(), 1.0);
      std::discrete_distribution<std::size_t> d(w.begin(), w.end());
      subset.push_back(list[d(rng)]);
    }
    LocalizationResult hyp;
    try {
      hyp = solve_tdoa_ls(mic_pos, subset, init, config.solver);
    } catch (const InsufficientMeasurements&) {
      continue;
    }
    if (!hyp.position.allFinite()) continue;
    const int count = score_position(hyp.position, nullptr);
    if (count > best_count) {
      best_count = count;
      best_pos = hyp.position;
    }
  }

  LocalizationResult out;
  out.position = best_pos;
  if (best_count < config.min_inliers) {
    out.inliers = std::max(best_count, 0);
    out.converged = false;
    return out;
  }
  std::vector<TdoaMeasurement> inliers;
  score_position(best_pos, &inliers);
  try {
    out = solve_tdoa_ls(mic_pos, inliers, best_pos, config.solver);
  } catch (const InsufficientMeasurements&) {
    out.position = best_pos;
    out.converged = false;
  }
  out.inliers = static_cast<int>(inliers.size());
  return out;
}

}  // namespace maeloc::multilat
