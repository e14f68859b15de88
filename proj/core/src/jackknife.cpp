#include "panelbc/jackknife.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

#include "panelbc/error.hpp"

namespace panelbc {

namespace {

using Eigen::VectorXd;

struct Task {
  std::string scheme;
  std::vector<std::size_t> units;
  std::vector<std::size_t> periods;
};

std::vector<std::size_t> all_but(std::size_t count, std::size_t skip) {
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    if (k != skip) out.push_back(k);
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t count) {
  std::vector<std::size_t> out(count);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

// Removes units and periods without outcome variation from A x C (repeatedly,
// since dropping one can strip another). Returns the counts removed.
std::pair<std::size_t, std::size_t> prune(const PanelData& data, const PanelIndex& idx,
                                          const Family& family, Task& task) {
  if (!family.needs_variation()) return {0, 0};
  std::vector<char> in_unit(idx.units, 0), in_period(idx.periods, 0);
  for (auto i : task.units) in_unit[i] = 1;
  for (auto t : task.periods) in_period[t] = 1;
  std::size_t dropped_units = 0, dropped_periods = 0;
  std::vector<std::size_t> rows;
  for (bool changed = true; changed;) {
    changed = false;
    for (auto i : task.units) {
      if (!in_unit[i]) continue;
      rows.clear();
      for (auto r : idx.unit_rows[i]) {
        if (in_period[idx.period[r]]) rows.push_back(r);
      }
      if (!rows.empty() && no_outcome_variation(family, data.y(), rows)) {
        in_unit[i] = 0;
        ++dropped_units;
        changed = true;
      }
    }
    for (auto t : task.periods) {
      if (!in_period[t]) continue;
      rows.clear();
      for (auto r : idx.period_rows[t]) {
        if (in_unit[idx.unit[r]]) rows.push_back(r);
      }
      if (!rows.empty() && no_outcome_variation(family, data.y(), rows)) {
        in_period[t] = 0;
        ++dropped_periods;
        changed = true;
      }
    }
  }
  std::erase_if(task.units, [&](std::size_t i) { return !in_unit[i]; });
  std::erase_if(task.periods, [&](std::size_t t) { return !in_period[t]; });
  return {dropped_units, dropped_periods};
}

VectorXd mean_of(const std::vector<SubEstimate>& subs, std::size_t begin, std::size_t end) {
  // mean as first + average deviation: exact when all entries are equal
  const VectorXd& first = subs[begin].beta;
  VectorXd acc = VectorXd::Zero(first.size());
  for (std::size_t k = begin + 1; k < end; ++k) acc += subs[k].beta - first;
  return first + acc / static_cast<double>(end - begin);
}

}  // namespace

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::vector<std::exception_ptr> errors(count);
  if (workers == 1) {
    for (std::size_t k = 0; k < count; ++k) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < count;) {
          try {
            fn(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> unit_halves(std::size_t units,
                                                                          Rng& rng) {
  std::vector<std::size_t> perm = iota(units);
  for (std::size_t k = units; k > 1; --k) {
    std::swap(perm[k - 1], perm[static_cast<std::size_t>(rng.below(k))]);
  }
  const std::size_t first = (units + 1) / 2;
  std::vector<std::size_t> a(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(first));
  std::vector<std::size_t> b(perm.begin() + static_cast<std::ptrdiff_t>(first), perm.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

VectorXd jbc_combine(const VectorXd& full, const VectorXd& unit_mean, const VectorXd& period_mean,
                     std::size_t units, std::size_t periods) {
  const double N = static_cast<double>(units);
  const double T = static_cast<double>(periods);
  // (N+T-1) s - (N-1) su - (T-1) st, written so that equal inputs come back exactly
  return full + (N - 1.0) * (full - unit_mean) + (T - 1.0) * (full - period_mean);
}

VectorXd sbc_combine(const VectorXd& full, const VectorXd& unit_half_mean,
                     const VectorXd& period_half_mean) {
  return full + (full - unit_half_mean) + (full - period_half_mean);
}

VectorXd hbc_combine(const VectorXd& full, const VectorXd& unit_mean,
                     const VectorXd& period_half_mean, std::size_t units) {
  const double N = static_cast<double>(units);
  return full + (N - 1.0) * (full - unit_mean) + (full - period_half_mean);
}

JackknifeResult jackknife(const PanelData& data, const Family& family, const FitResult& full_fit,
                          const Statistic& statistic, const JackknifeRequest& request,
                          const JackknifeOptions& opts) {
  const PanelIndex idx = build_index(data);
  const std::size_t N = idx.units, T = idx.periods;
  const bool leave_units = request.jbc || request.hbc;
  const bool leave_periods = request.jbc;
  const bool halves = request.sbc || request.hbc;
  const bool splits = request.sbc;
  if (leave_units && N < 2) throw ValidationError("leave-one-unit-out needs at least 2 units");
  if (leave_periods && T < 2) throw ValidationError("leave-one-period-out needs at least 2 periods");
  if (halves && T < 4) throw ValidationError("split-panel corrections need T >= 4");
  if (splits && N < 4) throw ValidationError("split-panel corrections need N >= 4");
  if (splits && opts.splits == 0) throw InputError("SBC needs at least one unit split");

  std::vector<Task> tasks;
  const auto all_units = iota(N);
  const auto all_periods = iota(T);
  std::size_t unit_begin = 0, period_begin = 0, half_begin = 0, split_begin = 0;
  unit_begin = tasks.size();
  if (leave_units) {
    for (std::size_t i = 0; i < N; ++i) {
      tasks.push_back({"leave_unit_out:" + data.ids().unit_labels[i], all_but(N, i), all_periods});
    }
  }
  period_begin = tasks.size();
  if (leave_periods) {
    for (std::size_t t = 0; t < T; ++t) {
      tasks.push_back(
          {"leave_period_out:" + data.ids().period_labels[t], all_units, all_but(T, t)});
    }
  }
  half_begin = tasks.size();
  if (halves) {
    auto [first, second] = period_halves(T);
    tasks.push_back({"period_half:1", all_units, std::move(first)});
    tasks.push_back({"period_half:2", all_units, std::move(second)});
  }
  split_begin = tasks.size();
  if (splits) {
    const Rng base(opts.seed, 0x5b1c);
    for (std::size_t s = 0; s < opts.splits; ++s) {
      Rng rng = base.substream(s);
      auto [a, b] = unit_halves(N, rng);
      const std::string tag = "unit_half:" + std::to_string(s + 1);
      tasks.push_back({tag + ":1", std::move(a), all_periods});
      tasks.push_back({tag + ":2", std::move(b), all_periods});
    }
  }

  JackknifeResult out;
  out.full = statistic(data, full_fit);
  out.subestimates.resize(tasks.size());
  parallel_for(tasks.size(), opts.workers, [&](std::size_t k) {
    Task task = tasks[k];
    SubEstimate& sub = out.subestimates[k];
    sub.scheme = task.scheme;
    const auto [du, dp] = prune(data, idx, family, task);
    if ((du > 0 || dp > 0) && opts.on_degenerate == JackknifeOptions::OnDegenerate::error) {
      throw ValidationError("subpanel " + task.scheme + " has " + std::to_string(du) +
                            " units and " + std::to_string(dp) +
                            " periods without outcome variation (allow dropping them to proceed)");
    }
    sub.dropped_units = du;
    sub.dropped_periods = dp;
    try {
      const Subpanel sp = restrict(data, task.units, task.periods);
      const FitResult f = fit(sp.data, family, opts.solve, restrict_start(full_fit, sp));
      sub.beta = statistic(sp.data, f);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError("subpanel " + task.scheme + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("subpanel " + task.scheme + ": " + e.what());
    }
  });

  if (request.jbc) {
    out.jbc = jbc_combine(out.full, mean_of(out.subestimates, unit_begin, period_begin),
                          mean_of(out.subestimates, period_begin, half_begin), N, T);
  }
  if (halves) {
    const VectorXd period_half = mean_of(out.subestimates, half_begin, split_begin);
    if (request.sbc) {
      out.sbc = sbc_combine(out.full, mean_of(out.subestimates, split_begin, tasks.size()),
                            period_half);
    }
    if (request.hbc) {
      out.hbc = hbc_combine(out.full, mean_of(out.subestimates, unit_begin, period_begin),
                            period_half, N);
    }
  }
  return out;
}

namespace {

CorrectedEstimate run_one(const PanelData& data, const Family& family, const FitResult& fe,
                          JackknifeOptions opts, Method method) {
  opts.solve.parameters_only = true;
  JackknifeRequest req;
  req.jbc = method == Method::jbc;
  req.sbc = method == Method::sbc;
  req.hbc = method == Method::hbc;
  const Statistic beta = [](const PanelData&, const FitResult& f) { return f.beta; };
  JackknifeResult r = jackknife(data, family, fe, beta, req, opts);
  CorrectedEstimate out;
  out.method = method;
  out.beta = method == Method::jbc ? r.jbc : method == Method::sbc ? r.sbc : r.hbc;
  out.vcov = vcov_beta(fe, build_index(data));
  out.splits = method == Method::sbc ? opts.splits : 0;
  out.seed = opts.seed;
  std::size_t du = 0, dp = 0;
  for (const auto& s : r.subestimates) {
    du += s.dropped_units;
    dp += s.dropped_periods;
  }
  if (du + dp > 0) {
    out.warnings.push_back("degenerate units/periods dropped inside subpanels: " +
                           std::to_string(du) + " units, " + std::to_string(dp) + " periods");
  }
  out.subestimates = std::move(r.subestimates);
  return out;
}

}  // namespace

CorrectedEstimate jbc(const PanelData& data, const Family& family, const FitResult& fe,
                      const JackknifeOptions& opts) {
  return run_one(data, family, fe, opts, Method::jbc);
}

CorrectedEstimate sbc(const PanelData& data, const Family& family, const FitResult& fe,
                      const JackknifeOptions& opts) {
  return run_one(data, family, fe, opts, Method::sbc);
}

CorrectedEstimate hbc(const PanelData& data, const Family& family, const FitResult& fe,
                      const JackknifeOptions& opts) {
  return run_one(data, family, fe, opts, Method::hbc);
}

}  // namespace panelbc
