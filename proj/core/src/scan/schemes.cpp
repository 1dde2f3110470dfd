#include "zigma/scan/schemes.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <sstream>

namespace zigma::scan {

namespace {

struct Cell {
  std::int64_t x;
  std::int64_t y;
};

std::int64_t sgn(std::int64_t v) { return (v > 0) - (v < 0); }

// Floor division, matching the recursion's reference formulation.
std::int64_t floor_half(std::int64_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

// Generalised Hilbert recursion over the rectangle spanned by the major
// vector (ax, ay) and the minor vector (bx, by) starting at (x, y).
void gilbert(std::int64_t x, std::int64_t y, std::int64_t ax, std::int64_t ay, std::int64_t bx, std::int64_t by,
             std::vector<Cell>& out) {
  const std::int64_t w = std::abs(ax + ay);
  const std::int64_t h = std::abs(bx + by);
  const std::int64_t dax = sgn(ax), day = sgn(ay);
  const std::int64_t dbx = sgn(bx), dby = sgn(by);

  if (h == 1) {
    for (std::int64_t i = 0; i < w; ++i, x += dax, y += day) out.push_back({x, y});
    return;
  }
  if (w == 1) {
    for (std::int64_t i = 0; i < h; ++i, x += dbx, y += dby) out.push_back({x, y});
    return;
  }

  std::int64_t ax2 = floor_half(ax), ay2 = floor_half(ay);
  std::int64_t bx2 = floor_half(bx), by2 = floor_half(by);
  const std::int64_t w2 = std::abs(ax2 + ay2);
  const std::int64_t h2 = std::abs(bx2 + by2);

  if (2 * w > 3 * h) {
    if ((w2 % 2) != 0 && w > 2) {
      ax2 += dax;
      ay2 += day;
    }
    gilbert(x, y, ax2, ay2, bx, by, out);
    gilbert(x + ax2, y + ay2, ax - ax2, ay - ay2, bx, by, out);
  } else {
    if ((h2 % 2) != 0 && h > 2) {
      bx2 += dbx;
      by2 += dby;
    }
    gilbert(x, y, bx2, by2, ax2, ay2, out);
    gilbert(x + bx2, y + by2, ax, ay, bx - bx2, by - by2, out);
    gilbert(x + (ax - dax) + (bx2 - dbx), y + (ay - day) + (by2 - dby), -bx2, -by2, -(ax - ax2), -(ay - ay2), out);
  }
}

std::vector<Cell> gilbert_path(std::int64_t width, std::int64_t height) {
  std::vector<Cell> out;
  out.reserve(static_cast<std::size_t>(width * height));
  // A continuous path from (0,0) that ends on the far corner of the major
  // axis exists only when that axis has even length (or both are odd), so
  // the major axis is the longer side unless parity forces the other one.
  bool major_is_x = width >= height;
  if ((width * height) % 2 == 0) {
    if (major_is_x && width % 2 == 1) major_is_x = false;
    else if (!major_is_x && height % 2 == 1) major_is_x = true;
  }
  if (major_is_x) {
    gilbert(0, 0, width, 0, 0, height, out);
  } else {
    gilbert(0, 0, 0, height, width, 0, out);
  }
  return out;
}

void check_variant(Family family, int variant) {
  if (variant < 0 || variant >= variant_count(family)) {
    throw SchemeError("unsupported variant " + std::to_string(variant) + " for " + family_name(family) +
                      " (valid: 0.." + std::to_string(variant_count(family) - 1) + ")");
  }
}

void check_extents(std::span<const std::size_t> dims, std::size_t expected) {
  if (dims.size() != expected) {
    throw SchemeError("expected " + std::to_string(expected) + " grid extents, got " + std::to_string(dims.size()));
  }
  for (auto d : dims) {
    if (d == 0) throw SchemeError("grid extents must be >= 1");
  }
}

// Maps a corner code (variant / 2) to (flip_x, flip_y).
std::pair<bool, bool> corner_flips(int corner) {
  switch (corner) {
    case 0: return {false, false};  // top-left
    case 1: return {true, true};    // bottom-right
    case 2: return {true, false};   // top-right
    default: return {false, true};  // bottom-left
  }
}

}  // namespace

std::string family_name(Family family) {
  switch (family) {
    case Family::Sweep: return "sweep";
    case Family::Zigzag: return "zigzag";
    case Family::Hilbert: return "hilbert";
    case Family::Sweep3D: return "sweep3d";
    case Family::Zigzag3D: return "zigzag3d";
    case Family::FactorizedST: return "factorized";
  }
  return "unknown";
}

Family parse_family(const std::string& name) {
  for (auto f : {Family::Sweep, Family::Zigzag, Family::Hilbert, Family::Sweep3D, Family::Zigzag3D,
                 Family::FactorizedST}) {
    if (family_name(f) == name) return f;
  }
  throw SchemeError("unknown scan scheme: " + name);
}

int variant_count(Family family) {
  switch (family) {
    case Family::Zigzag:
    case Family::Hilbert: return 8;
    case Family::FactorizedST: return 2;
    default: return 1;
  }
}

void check_scheme(const ScanScheme& scheme) {
  check_variant(scheme.family, scheme.variant);
  const bool is_3d = scheme.family == Family::Sweep3D || scheme.family == Family::Zigzag3D ||
                     scheme.family == Family::FactorizedST;
  check_extents(scheme.dims, is_3d ? 3 : 2);
  if (scheme.family == Family::FactorizedST) {
    if (scheme.pattern.empty()) throw SchemeError("factorized scan pattern is empty");
    for (char c : scheme.pattern) {
      if (c != 's' && c != 't') {
        throw SchemeError(std::string("factorized scan pattern may only contain 's' and 't', found '") + c + "'");
      }
    }
  }
}

Permutation sweep_2d(std::size_t width, std::size_t height) {
  const std::size_t dims[] = {width, height};
  check_extents(dims, 2);
  return Permutation::identity(width * height);
}

Permutation zigzag_2d(std::size_t width, std::size_t height, int variant) {
  const std::size_t dims[] = {width, height};
  check_extents(dims, 2);
  check_variant(Family::Zigzag, variant);
  const auto [flip_x, flip_y] = corner_flips(variant / 2);
  const bool by_columns = variant % 2 == 1;
  const std::size_t outer = by_columns ? width : height;
  const std::size_t inner = by_columns ? height : width;

  std::vector<Index> order;
  order.reserve(width * height);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t along = (o % 2 == 0) ? i : inner - 1 - i;
      std::size_t x = by_columns ? o : along;
      std::size_t y = by_columns ? along : o;
      if (flip_x) x = width - 1 - x;
      if (flip_y) y = height - 1 - y;
      order.push_back(y * width + x);
    }
  }
  return Permutation(std::move(order));
}

Permutation hilbert_2d(std::size_t width, std::size_t height, int variant) {
  const std::size_t dims[] = {width, height};
  check_extents(dims, 2);
  check_variant(Family::Hilbert, variant);
  const bool transposed = variant % 2 == 1;
  const auto [flip_x, flip_y] = corner_flips(variant / 2);
  const auto gw = static_cast<std::int64_t>(transposed ? height : width);
  const auto gh = static_cast<std::int64_t>(transposed ? width : height);

  std::vector<Index> order;
  order.reserve(width * height);
  for (const auto& c : gilbert_path(gw, gh)) {
    auto x = static_cast<std::size_t>(transposed ? c.y : c.x);
    auto y = static_cast<std::size_t>(transposed ? c.x : c.y);
    if (flip_x) x = width - 1 - x;
    if (flip_y) y = height - 1 - y;
    order.push_back(y * width + x);
  }
  return Permutation(std::move(order));
}

Permutation sweep_3d(std::size_t frames, std::size_t width, std::size_t height) {
  const std::size_t dims[] = {frames, width, height};
  check_extents(dims, 3);
  return Permutation::identity(frames * width * height);
}

Permutation zigzag_3d(std::size_t frames, std::size_t width, std::size_t height, int variant) {
  const std::size_t dims[] = {frames, width, height};
  check_extents(dims, 3);
  check_variant(Family::Zigzag3D, variant);
  const auto plane = zigzag_2d(width, height, 0);
  const std::size_t cells = width * height;
  std::vector<Index> order;
  order.reserve(frames * cells);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < cells; ++k) {
      const std::size_t pick = (t % 2 == 0) ? k : cells - 1 - k;
      order.push_back(t * cells + plane[pick]);
    }
  }
  return Permutation(std::move(order));
}

std::vector<std::size_t> temporal_sweep(std::size_t frames, int variant) {
  if (variant != 0 && variant != 1) {
    throw SchemeError("temporal sweep variant must be 0 (forward) or 1 (backward), got " + std::to_string(variant));
  }
  std::vector<std::size_t> order(frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (variant == 1) std::reverse(order.begin(), order.end());
  return order;
}

FactorizedPlan factorized_plan(std::size_t frames, std::size_t width, std::size_t height, const std::string& pattern) {
  ScanScheme scheme{Family::FactorizedST, 0, {frames, width, height}, pattern};
  check_scheme(scheme);
  return std::get<FactorizedPlan>(generate_3d(scheme));
}

std::variant<Permutation, FactorizedPlan> generate_3d(const ScanScheme& scheme) {
  check_scheme(scheme);
  const auto& d = scheme.dims;
  switch (scheme.family) {
    case Family::Sweep: return sweep_2d(d[0], d[1]);
    case Family::Zigzag: return zigzag_2d(d[0], d[1], scheme.variant);
    case Family::Hilbert: return hilbert_2d(d[0], d[1], scheme.variant);
    case Family::Sweep3D: return sweep_3d(d[0], d[1], d[2]);
    case Family::Zigzag3D: return zigzag_3d(d[0], d[1], d[2], scheme.variant);
    case Family::FactorizedST: break;
  }

  const std::size_t frames = d[0], width = d[1], height = d[2];
  const std::size_t cells = width * height;
  FactorizedPlan plan{scheme.dims, scheme.pattern, {}};
  int spatial_seen = 0;
  int temporal_seen = 0;
  for (char axis : scheme.pattern) {
    std::vector<Index> order;
    order.reserve(frames * cells);
    if (axis == 's') {
      const int variant = spatial_seen++ % 8;
      const auto plane = zigzag_2d(width, height, variant);
      for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t k = 0; k < cells; ++k) order.push_back(t * cells + plane[k]);
      }
      plan.steps.push_back({'s', variant, Permutation(std::move(order))});
    } else {
      const int variant = (scheme.variant + temporal_seen++) % 2;
      const auto frame_order = temporal_sweep(frames, variant);
      for (std::size_t cell = 0; cell < cells; ++cell) {
        for (auto t : frame_order) order.push_back(t * cells + cell);
      }
      plan.steps.push_back({'t', variant, Permutation(std::move(order))});
    }
  }
  return plan;
}

Permutation generate(const ScanScheme& scheme) {
  if (scheme.family == Family::FactorizedST) {
    throw SchemeError("factorized scans produce a per-layer plan; use generate_3d");
  }
  return std::get<Permutation>(generate_3d(scheme));
}

ContinuityReport validate(std::span<const Index> order, std::span<const std::size_t> dims) {
  if (dims.empty() || dims.size() > 3) throw SchemeError("validate expects 2 or 3 grid extents");
  std::size_t cells = 1;
  for (auto e : dims) cells *= e;
  std::vector<bool> seen(cells, false);
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (order[k] >= cells) {
      throw NotBijectiveError("cell " + std::to_string(order[k]) + " at position " + std::to_string(k) +
                              " lies outside the grid");
    }
    if (seen[order[k]]) {
      throw NotBijectiveError("cell " + std::to_string(order[k]) + " visited twice (position " + std::to_string(k) +
                              ")");
    }
    seen[order[k]] = true;
  }

  // Coordinates with x fastest: (x, y) or (x, y, t).
  auto coords = [&](Index i) {
    std::array<std::int64_t, 3> c{0, 0, 0};
    if (dims.size() == 2) {
      c[0] = static_cast<std::int64_t>(i % dims[0]);
      c[1] = static_cast<std::int64_t>(i / dims[0]);
    } else {
      const std::size_t plane = dims[1] * dims[2];
      c[2] = static_cast<std::int64_t>(i / plane);
      c[0] = static_cast<std::int64_t>((i % plane) % dims[1]);
      c[1] = static_cast<std::int64_t>((i % plane) / dims[1]);
    }
    return c;
  };

  ContinuityReport report;
  report.is_space_filling = order.size() == cells;
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto a = coords(order[k - 1]);
    const auto b = coords(order[k]);
    const auto dist =
        static_cast<std::size_t>(std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]));
    report.max_step = std::max(report.max_step, dist);
    if (dist > 1) ++report.breaks;
  }
  return report;
}

ScanScheme scheme_for_layer(std::size_t layer, int orf, std::vector<std::size_t> dims, Family family) {
  if (orf < 1 || orf > 8) throw SchemeError("order receptive field must be in [1, 8], got " + std::to_string(orf));
  if (family != Family::Zigzag && family != Family::Hilbert) {
    throw SchemeError("per-layer cycling applies to zigzag and hilbert scans");
  }
  return {family, static_cast<int>(layer % static_cast<std::size_t>(orf)), std::move(dims), "sst"};
}

std::string render_arrows(const Permutation& p, std::size_t width, std::size_t height) {
  if (p.size() != width * height) throw SchemeError("render_arrows: order does not cover the grid");
  std::vector<char> glyph(width * height, '?');
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Index cur = p[k];
    if (k + 1 == p.size()) {
      glyph[cur] = '*';
      continue;
    }
    const Index next = p[k + 1];
    const auto cx = static_cast<std::int64_t>(cur % width), cy = static_cast<std::int64_t>(cur / width);
    const auto nx = static_cast<std::int64_t>(next % width), ny = static_cast<std::int64_t>(next / width);
    if (ny == cy && nx == cx + 1) glyph[cur] = '>';
    else if (ny == cy && nx == cx - 1) glyph[cur] = '<';
    else if (nx == cx && ny == cy + 1) glyph[cur] = 'v';
    else if (nx == cx && ny == cy - 1) glyph[cur] = '^';
    else glyph[cur] = 'S';
  }
  std::ostringstream os;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (x) os << ' ';
      os << glyph[y * width + x];
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace zigma::scan
