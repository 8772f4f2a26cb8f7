#pragma once

// Toroidal Counting Grid: a grid of word distributions pi_k. A bag is
// generated by picking a window location l and drawing every word from the
// window average h_l. Window sums are computed with summed-area tables over
// a tiled copy of the grid so wraparound costs nothing extra.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "steer/binary_io.hpp"
#include "steer/corpus.hpp"
#include "steer/rng.hpp"

namespace steer::cg {

struct Extent {
  std::size_t x = 0;
  std::size_t y = 0;

  std::size_t area() const { return x * y; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

/// Grid cell, row-major index = y * E_x + x.
struct GridIndex {
  std::size_t x = 0;
  std::size_t y = 0;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

inline std::size_t flat_index(Extent grid, GridIndex at) { return at.y * grid.x + at.x; }
inline GridIndex grid_index(Extent grid, std::size_t flat) { return {flat % grid.x, flat / grid.x}; }

inline std::size_t wrap(long long v, std::size_t n) {
  const long long m = static_cast<long long>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

/// Smallest per-axis displacement between two cells on the torus.
inline std::pair<std::size_t, std::size_t> torus_distance(Extent grid, GridIndex a, GridIndex b) {
  auto axis = [](std::size_t p, std::size_t q, std::size_t n) {
    const std::size_t d = p > q ? p - q : q - p;
    return std::min(d, n - d);
  };
  return {axis(a.x, b.x, grid.x), axis(a.y, b.y, grid.y)};
}

/// True when `b` is inside the window-sized neighbourhood centred on `a`.
inline bool within_window(Extent grid, Extent window, GridIndex a, GridIndex b) {
  auto [dx, dy] = torus_distance(grid, a, b);
  return dx <= window.x / 2 && dy <= window.y / 2;
}

inline constexpr double kProbabilityFloor = 1e-10;

struct CGModel {
  Extent grid;
  Extent window;
  std::size_t vocab_size = 0;
  std::vector<double> pi;  // grid.area() rows of vocab_size

  std::size_t locations() const { return grid.area(); }

  const double* row(std::size_t loc) const { return pi.data() + loc * vocab_size; }
  double* row(std::size_t loc) { return pi.data() + loc * vocab_size; }

  void validate() const {
    if (grid.x == 0 || grid.y == 0) throw std::invalid_argument("grid extent must be positive");
    if (window.x == 0 || window.y == 0) throw std::invalid_argument("window extent must be positive");
    if (vocab_size == 0) throw std::invalid_argument("empty vocabulary");
    if (pi.size() != grid.area() * vocab_size) throw std::invalid_argument("pi has wrong size");
  }

  static CGModel uniform(Extent grid, Extent window, std::size_t vocab_size) {
    CGModel m{grid, window, vocab_size, std::vector<double>(grid.area() * vocab_size, 1.0 / static_cast<double>(vocab_size))};
    m.validate();
    return m;
  }

  // "cg-v1 E_x E_y W_x W_y vocab_size\n" + little-endian rows of pi.
  void save(std::ostream& out) const {
    out << "cg-v1 " << grid.x << ' ' << grid.y << ' ' << window.x << ' ' << window.y << ' ' << vocab_size << '\n';
    io::write_doubles(out, pi.data(), pi.size());
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    save(out);
  }

  static CGModel load(std::istream& in) {
    const auto h = io::read_header(in, "cg-v1");
    if (h.size() != 5) throw io::FormatError("cg-v1 header needs 5 fields");
    CGModel m;
    m.grid = {io::parse_size(h[0]), io::parse_size(h[1])};
    m.window = {io::parse_size(h[2]), io::parse_size(h[3])};
    m.vocab_size = io::parse_size(h[4]);
    m.pi.resize(m.grid.area() * m.vocab_size);
    io::read_doubles(in, m.pi.data(), m.pi.size());
    m.validate();
    return m;
  }

  static CGModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    return load(in);
  }
};

/// Window-averaged distributions h, same layout as pi.
struct HistGrid {
  Extent grid;
  Extent window;
  std::size_t vocab_size = 0;
  std::vector<double> h;

  const double* row(std::size_t loc) const { return h.data() + loc * vocab_size; }
};

/// Un-normalized window sums: out_l = sum over j in the window anchored at l
/// (cells l .. l + W - 1, wrapping) of values_j. `values` is grid.area() rows
/// of `width` entries.
inline std::vector<double> window_sums(const std::vector<double>& values, Extent grid, Extent window, std::size_t width) {
  const std::size_t tx = grid.x + window.x;
  const std::size_t ty = grid.y + window.y;
  // sat[(i * ty + j) * width + z] = sum of tiled values over [0,i) x [0,j).
  std::vector<double> sat((tx + 1) * (ty + 1) * width, 0.0);
  auto at = [&](std::size_t i, std::size_t j) { return sat.data() + (i * (ty + 1) + j) * width; };
  for (std::size_t i = 0; i < tx; ++i) {
    for (std::size_t j = 0; j < ty; ++j) {
      const double* v = values.data() + flat_index(grid, {i % grid.x, j % grid.y}) * width;
      double* out = at(i + 1, j + 1);
      const double* up = at(i, j + 1);
      const double* left = at(i + 1, j);
      const double* diag = at(i, j);
      for (std::size_t z = 0; z < width; ++z) out[z] = v[z] + up[z] + left[z] - diag[z];
    }
  }
  std::vector<double> sums(grid.area() * width);
  for (std::size_t y = 0; y < grid.y; ++y) {
    for (std::size_t x = 0; x < grid.x; ++x) {
      double* out = sums.data() + flat_index(grid, {x, y}) * width;
      const double* a = at(x + window.x, y + window.y);
      const double* b = at(x, y + window.y);
      const double* c = at(x + window.x, y);
      const double* d = at(x, y);
      for (std::size_t z = 0; z < width; ++z) out[z] = a[z] - b[z] - c[z] + d[z];
    }
  }
  return sums;
}

inline HistGrid window_histograms(const CGModel& model) {
  model.validate();
  if (model.window.area() == 1) return {model.grid, model.window, model.vocab_size, model.pi};
  HistGrid out{model.grid, model.window, model.vocab_size, window_sums(model.pi, model.grid, model.window, model.vocab_size)};
  const double inv_area = 1.0 / static_cast<double>(model.window.area());
  for (auto& v : out.h) v *= inv_area;
  return out;
}

/// sum_z count(z) log h_l(z); -inf when a needed entry is zero.
inline double bag_log_likelihood(const HistGrid& hist, const Bag& bag, std::size_t location) {
  const double* h = hist.row(location);
  double ll = 0.0;
  for (const auto& [id, count] : bag.counts) {
    if (id >= hist.vocab_size) throw std::out_of_range("bag word id outside the grid vocabulary");
    if (h[id] <= 0.0) return -std::numeric_limits<double>::infinity();
    ll += static_cast<double>(count) * std::log(h[id]);
  }
  return ll;
}

inline double bag_log_likelihood(const CGModel& model, const Bag& bag, std::size_t location) {
  return bag_log_likelihood(window_histograms(model), bag, location);
}

/// Normalized p(l | bag) over all grid cells, row-major.
struct LocationPosterior {
  Extent grid;
  std::vector<double> prob;

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(prob.begin(), prob.end()) - prob.begin());
  }

  static LocationPosterior uniform(Extent grid) {
    return {grid, std::vector<double>(grid.area(), 1.0 / static_cast<double>(grid.area()))};
  }
};

namespace detail {

// Normalizes log-scores in place into probabilities; returns log-sum-exp.
inline double normalize_log(std::vector<double>& scores) {
  const double top = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(top)) {
    std::fill(scores.begin(), scores.end(), 1.0 / static_cast<double>(scores.size()));
    return top;
  }
  double total = 0.0;
  for (auto& s : scores) {
    s = std::exp(s - top);
    total += s;
  }
  for (auto& s : scores) s /= total;
  return top + std::log(total);
}

// Uniform prior: log p(l) is a constant and cancels in the posterior.
inline std::vector<double> location_scores(const HistGrid& hist, const std::vector<double>& log_h, const Bag& bag) {
  const std::size_t locations = hist.grid.area();
  std::vector<double> scores(locations, 0.0);
  const double log_prior = -std::log(static_cast<double>(locations));
  for (std::size_t l = 0; l < locations; ++l) {
    const double* lh = log_h.data() + l * hist.vocab_size;
    double s = log_prior;
    for (const auto& [id, count] : bag.counts) {
      if (id >= hist.vocab_size) throw std::out_of_range("bag word id outside the grid vocabulary");
      s += static_cast<double>(count) * lh[id];
    }
    scores[l] = std::isnan(s) ? -std::numeric_limits<double>::infinity() : s;
  }
  return scores;
}

inline std::vector<double> log_of(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? std::log(v[i]) : -std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace detail

/// Posterior with a log-sum-exp guard. Empty bags (and bags that zero every
/// location) return the uniform prior.
inline LocationPosterior posterior(const HistGrid& hist, const std::vector<double>& log_h, const Bag& bag) {
  if (bag.empty()) return LocationPosterior::uniform(hist.grid);
  auto scores = detail::location_scores(hist, log_h, bag);
  detail::normalize_log(scores);
  return {hist.grid, std::move(scores)};
}

inline LocationPosterior posterior(const HistGrid& hist, const Bag& bag) {
  return posterior(hist, detail::log_of(hist.h), bag);
}

inline LocationPosterior posterior(const CGModel& model, const Bag& bag) {
  return posterior(window_histograms(model), bag);
}

/// A trained grid together with its cached histograms, for repeated queries.
class CountingGrid {
 public:
  explicit CountingGrid(CGModel model)
      : model_(std::move(model)), hist_(window_histograms(model_)), log_h_(detail::log_of(hist_.h)) {}

  const CGModel& model() const { return model_; }
  const HistGrid& histograms() const { return hist_; }
  Extent grid() const { return model_.grid; }
  Extent window() const { return model_.window; }

  LocationPosterior posterior(const Bag& bag) const { return cg::posterior(hist_, log_h_, bag); }

  double log_likelihood(const Bag& bag, std::size_t location) const { return bag_log_likelihood(hist_, bag, location); }

  /// log sum_l p(l) P(bag | l)
  double marginal_log_likelihood(const Bag& bag) const {
    if (bag.empty()) return 0.0;
    auto scores = detail::location_scores(hist_, log_h_, bag);
    return detail::normalize_log(scores);
  }

 private:
  CGModel model_;
  HistGrid hist_;
  std::vector<double> log_h_;
};

struct EMConfig {
  Extent grid{16, 16};
  Extent window{3, 3};
  std::size_t iterations = 50;
  std::uint64_t seed = 7;
};

struct EMResult {
  CGModel model;
  std::vector<double> log_likelihood;  // total, evaluated at the start of each iteration
};

inline void floor_and_normalize(CGModel& model) {
  for (std::size_t l = 0; l < model.locations(); ++l) {
    double* r = model.row(l);
    double total = 0.0;
    for (std::size_t z = 0; z < model.vocab_size; ++z) {
      r[z] = std::max(r[z], kProbabilityFloor);
      total += r[z];
    }
    for (std::size_t z = 0; z < model.vocab_size; ++z) r[z] /= total;
  }
}

inline CGModel random_model(Extent grid, Extent window, std::size_t vocab_size, std::uint64_t seed) {
  CGModel model{grid, window, vocab_size, {}};
  model.pi.reserve(grid.area() * vocab_size);
  Rng rng(seed);
  for (std::size_t l = 0; l < grid.area(); ++l) {
    auto r = rng.dirichlet(vocab_size, 1.0);
    model.pi.insert(model.pi.end(), r.begin(), r.end());
  }
  floor_and_normalize(model);
  model.validate();
  return model;
}

/// One EM iteration from `model`; returns the data log-likelihood of the
/// incoming model.
inline double em_step(CGModel& model, const std::vector<Bag>& bags) {
  const std::size_t locations = model.locations();
  const std::size_t vocab = model.vocab_size;
  const HistGrid hist = window_histograms(model);
  const auto log_h = detail::log_of(hist.h);

  // accum_l(z) = sum_t count_t(z) q_t(l)
  std::vector<double> accum(locations * vocab, 0.0);
  double total_ll = 0.0;
  for (const auto& bag : bags) {
    if (bag.empty()) continue;
    auto q = detail::location_scores(hist, log_h, bag);
    total_ll += detail::normalize_log(q);
    for (std::size_t l = 0; l < locations; ++l) {
      if (q[l] == 0.0) continue;
      double* a = accum.data() + l * vocab;
      for (const auto& [id, count] : bag.counts) a[id] += static_cast<double>(count) * q[l];
    }
  }
  for (std::size_t i = 0; i < accum.size(); ++i) accum[i] /= hist.h[i];

  // Each cell k collects from every window that covers it, i.e. the windows
  // anchored in k - W + 1 .. k. Those are the anchored sums shifted by W - 1.
  const auto covered = window_sums(accum, model.grid, model.window, vocab);
  for (std::size_t y = 0; y < model.grid.y; ++y) {
    for (std::size_t x = 0; x < model.grid.x; ++x) {
      const std::size_t k = flat_index(model.grid, {x, y});
      const std::size_t src = flat_index(
          model.grid, {wrap(static_cast<long long>(x) - static_cast<long long>(model.window.x - 1), model.grid.x),
                       wrap(static_cast<long long>(y) - static_cast<long long>(model.window.y - 1), model.grid.y)});
      double* r = model.row(k);
      const double* c = covered.data() + src * vocab;
      double total = 0.0;
      for (std::size_t z = 0; z < vocab; ++z) {
        r[z] *= c[z];
        total += r[z];
      }
      if (total > 0.0) {
        for (std::size_t z = 0; z < vocab; ++z) r[z] /= total;
      } else {
        std::fill(r, r + vocab, 1.0 / static_cast<double>(vocab));
      }
    }
  }
  floor_and_normalize(model);
  return total_ll;
}

inline EMResult em_fit(const std::vector<Bag>& bags, std::size_t vocab_size, const EMConfig& config) {
  if (bags.empty()) throw std::invalid_argument("em_fit needs at least one bag");
  EMResult result{random_model(config.grid, config.window, vocab_size, config.seed), {}};
  for (std::size_t it = 0; it < config.iterations; ++it) {
    result.log_likelihood.push_back(em_step(result.model, bags));
  }
  return result;
}

/// Highest-probability words at a cell, descending, ties by lower id.
inline std::vector<std::pair<TokenId, double>> top_words(const CGModel& model, std::size_t location, std::size_t k) {
  if (k < 1) throw std::invalid_argument("top_words needs k >= 1");
  if (location >= model.locations()) throw std::out_of_range("grid location out of range");
  const double* r = model.row(location);
  std::vector<TokenId> ids(model.vocab_size);
  for (std::size_t z = 0; z < ids.size(); ++z) ids[z] = static_cast<TokenId>(z);
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(k), ids.end(), [r](TokenId a, TokenId b) {
    return r[a] != r[b] ? r[a] > r[b] : a < b;
  });
  std::vector<std::pair<TokenId, double>> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(ids[i], r[ids[i]]);
  return out;
}

/// Text rendering of the grid: each cell shows its top-k words stacked.
inline std::string render_grid(const CGModel& model, const Vocabulary& vocab, std::size_t k, std::size_t cell_width = 12) {
  std::string out;
  for (std::size_t y = 0; y < model.grid.y; ++y) {
    std::vector<std::vector<std::string>> cells;
    for (std::size_t x = 0; x < model.grid.x; ++x) {
      std::vector<std::string> words;
      for (const auto& [id, p] : top_words(model, flat_index(model.grid, {x, y}), k)) {
        words.push_back(id < vocab.size() ? vocab.word(id) : std::to_string(id));
      }
      cells.push_back(std::move(words));
    }
    for (std::size_t line = 0; line < k; ++line) {
      for (std::size_t x = 0; x < model.grid.x; ++x) {
        std::string w = line < cells[x].size() ? cells[x][line] : "";
        if (w.size() > cell_width - 1) w.resize(cell_width - 1);
        w.resize(cell_width, ' ');
        out += w;
      }
      while (!out.empty() && out.back() == ' ') out.pop_back();
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

}  // namespace steer::cg
