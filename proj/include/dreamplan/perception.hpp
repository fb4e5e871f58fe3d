#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dreamplan/geometry.hpp"
#include "dreamplan/sim.hpp"

namespace dreamplan {

/// Square occupancy grid, row-major, row 0 at the top; cells in [0,1].
struct Frame {
  int size = 0;
  std::vector<double> cells;

  Frame() = default;
  explicit Frame(int grid) : size(grid), cells(static_cast<std::size_t>(grid) * grid, 0.0) {}

  double& at(int row, int col) { return cells[static_cast<std::size_t>(row) * size + col]; }
  double at(int row, int col) const { return cells[static_cast<std::size_t>(row) * size + col]; }
  double total() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Cell containing a workspace position (clamped to the grid). Returns {row, col}.
std::pair<int, int> cell_of(Vec2 p, int grid);

/// Splats points (bilinear, unit weight) and spring segments (line samples every half cell).
/// Points outside the workspace are clamped to it; `clamped` reports whether that happened.
Frame rasterize(const MassPointBody& body, int grid, bool* clamped = nullptr);

/// Greedy max-min subset selection starting at index 0; ties (equal to 1e-12 relative) go to the lowest index.
std::vector<std::size_t> farthest_point_sampling(std::span<const Vec2> points, std::size_t n);

struct KeypointSet {
  std::vector<Vec2> coords;
  std::vector<std::size_t> source_indices;

  std::size_t size() const { return coords.size(); }
  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

KeypointSet extract_keypoints(const MassPointBody& body, std::size_t n);

/// Progressive renderings of the gripper path: frame f shows the path up to f/F of the way.
struct ActionCue {
  std::vector<Frame> frames;
};

ActionCue render_action_cue(Vec2 grasp, Vec2 target, int frame_count, int grid);

/// Sum of cell-wise minima over sum of cell-wise maxima; 1 when both grids are empty.
double soft_iou(const Frame& a, const Frame& b);

/// Half-open cell rectangle [row0, row1) x [col0, col1).
struct Region {
  int row0 = 0;
  int row1 = 0;
  int col0 = 0;
  int col1 = 0;

  bool empty() const { return row1 <= row0 || col1 <= col0; }
};

/// Bounding box of nonzero cells, grown by `pad` and clipped to the grid. Empty if the frame is blank.
Region nonzero_bounds(const Frame& frame, int pad);

inline constexpr double kPsnrCap = 99.0;

/// Peak signal-to-noise ratio with peak 1. Region defaults to the padded bounds of `truth`.
double psnr(const Frame& pred, const Frame& truth, std::optional<Region> region = std::nullopt);

double mean_squared_error(const Frame& a, const Frame& b);

}  // namespace dreamplan
