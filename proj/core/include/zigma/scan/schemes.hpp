#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "zigma/scan/permutation.hpp"

// Token scan orders over patch grids.
//
// Cell numbering: a 2-D grid has dims (W, H) and cell (x, y) has index
// y * W + x. A 3-D grid has dims (T, W, H) and cell (t, x, y) has index
// t * W * H + y * W + x. The i-th entry of a scan order is the index of the
// i-th visited cell.
//
// Zigzag variants (4 start corners x 2 primary axes):
//   0 top-left  rows     1 top-left  columns
//   2 bot-right rows     3 bot-right columns
//   4 top-right rows     5 top-right columns
//   6 bot-left  rows     7 bot-left  columns
// "rows" walks each row end to end and reverses direction on the next row
// (boustrophedon); "columns" does the same along columns.
//
// Hilbert variants use the same corner numbering (variant / 2) with
// variant % 2 == 1 meaning the curve is generated on the transposed grid.
namespace zigma::scan {

enum class Family { Sweep, Zigzag, Hilbert, Sweep3D, Zigzag3D, FactorizedST };

std::string family_name(Family family);
Family parse_family(const std::string& name);
// Number of variants accepted for the family.
int variant_count(Family family);

struct ScanScheme {
  Family family = Family::Zigzag;
  int variant = 0;
  std::vector<std::size_t> dims;  // (W, H) or (T, W, H)
  std::string pattern = "sst";    // FactorizedST layer pattern over {s, t}
};

class SchemeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void check_scheme(const ScanScheme& scheme);

Permutation sweep_2d(std::size_t width, std::size_t height);
Permutation zigzag_2d(std::size_t width, std::size_t height, int variant);
// Generalised Hilbert curve (gilbert recursion) for any rectangle.
Permutation hilbert_2d(std::size_t width, std::size_t height, int variant);
Permutation sweep_3d(std::size_t frames, std::size_t width, std::size_t height);
// One continuous path through all frames: 2-D zigzag in each frame, odd
// frames walk the previous frame's path backwards so frame seams are adjacent.
Permutation zigzag_3d(std::size_t frames, std::size_t width, std::size_t height, int variant = 0);

// Frame visiting order of a temporal sweep: variant 0 forward, 1 backward.
std::vector<std::size_t> temporal_sweep(std::size_t frames, int variant);

struct FactorizedStep {
  char axis;        // 's' spatial zigzag per frame, 't' temporal sweep per cell
  int variant;      // zigzag variant for 's', sweep direction for 't'
  Permutation order;  // over all T*W*H tokens
};

struct FactorizedPlan {
  std::vector<std::size_t> dims;
  std::string pattern;
  std::vector<FactorizedStep> steps;
};

// The k-th 's' uses zigzag variant k mod 8, the k-th 't' alternates forward
// and backward sweeps. Frame-major token layout for 's'; for 't' the tokens
// of one spatial cell are contiguous.
FactorizedPlan factorized_plan(std::size_t frames, std::size_t width, std::size_t height,
                               const std::string& pattern = "sst");

// Dispatches every family. FactorizedST returns a plan, everything else a
// single permutation.
std::variant<Permutation, FactorizedPlan> generate_3d(const ScanScheme& scheme);

// 2-D and single-order 3-D families; throws SchemeError for FactorizedST.
Permutation generate(const ScanScheme& scheme);

struct ContinuityReport {
  bool is_space_filling = false;
  std::size_t max_step = 0;  // max Manhattan distance between consecutive cells
  std::size_t breaks = 0;    // consecutive pairs with distance > 1
};

// Throws NotBijectiveError when `order` repeats a cell or leaves the grid.
ContinuityReport validate(std::span<const Index> order, std::span<const std::size_t> dims);
inline ContinuityReport validate(const Permutation& p, std::span<const std::size_t> dims) {
  return validate(p.order(), dims);
}

// Scheme used by layer `layer` when `orf` distinct schemes are cycled
// (orf in [1, 8]): variant layer mod orf of `family` (Zigzag or Hilbert).
ScanScheme scheme_for_layer(std::size_t layer, int orf, std::vector<std::size_t> dims = {},
                            Family family = Family::Zigzag);

// Plain-text arrow rendering of a 2-D order: each cell shows the direction
// to the next visited cell, 'S' marks jumps of more than one cell and '*'
// marks the end.
std::string render_arrows(const Permutation& p, std::size_t width, std::size_t height);

}  // namespace zigma::scan
