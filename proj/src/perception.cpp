#include "dreamplan/perception.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dreamplan/errors.hpp"

namespace dreamplan {

double Frame::total() const {
  double s = 0.0;
  for (double v : cells) s += v;
  return s;
}

std::pair<int, int> cell_of(Vec2 p, int grid) {
  const int col = std::clamp(static_cast<int>(std::floor(p.x * grid)), 0, grid - 1);
  const int row = std::clamp(static_cast<int>(std::floor(p.y * grid)), 0, grid - 1);
  return {row, col};
}

namespace {

void splat(Frame& frame, Vec2 p) {
  const int grid = frame.size;
  const double u = p.x * grid - 0.5;
  const double v = p.y * grid - 0.5;
  const double c0 = std::floor(u);
  const double r0 = std::floor(v);
  const double fu = u - c0;
  const double fv = v - r0;
  const int ci = static_cast<int>(c0);
  const int ri = static_cast<int>(r0);
  const double weights[2][2] = {{(1 - fv) * (1 - fu), (1 - fv) * fu}, {fv * (1 - fu), fv * fu}};
  for (int dr = 0; dr < 2; ++dr)
    for (int dc = 0; dc < 2; ++dc) {
      const int r = ri + dr;
      const int c = ci + dc;
      if (r < 0 || c < 0 || r >= grid || c >= grid) continue;
      frame.at(r, c) += weights[dr][dc];
    }
}

Vec2 clamp_to_workspace(Vec2 p, bool& clamped) {
  const Vec2 q{std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0)};
  if (!(q == p)) clamped = true;
  return q;
}

}  // namespace

Frame rasterize(const MassPointBody& body, int grid, bool* clamped) {
  if (grid < 8) throw InvalidArgument("grid must be at least 8");
  Frame frame(grid);
  bool any_clamped = false;
  std::vector<Vec2> pts;
  pts.reserve(body.size());
  for (const Vec2& p : body.points) pts.push_back(clamp_to_workspace(p, any_clamped));

  for (const Vec2& p : pts) splat(frame, p);
  const double spacing = 0.5 / grid;
  for (const Spring& s : body.springs) {
    const Vec2 a = pts[s.i];
    const Vec2 b = pts[s.j];
    const int n = static_cast<int>(std::ceil(distance(a, b) / spacing));
    for (int k = 1; k < n; ++k) splat(frame, lerp(a, b, static_cast<double>(k) / n));
  }
  for (double& c : frame.cells) c = std::clamp(c, 0.0, 1.0);
  if (clamped) *clamped = any_clamped;
  return frame;
}

namespace {
constexpr double kTieTolerance = 1e-12;
}  // namespace

std::vector<std::size_t> farthest_point_sampling(std::span<const Vec2> points, std::size_t n) {
  if (points.empty()) throw InvalidArgument("farthest point sampling needs at least one point");
  if (n < 1 || n > points.size()) throw InvalidArgument("sample count must be in [1, point count]");

  std::vector<std::size_t> selected{0};
  std::vector<bool> taken(points.size(), false);
  taken[0] = true;
  std::vector<double> min_d2(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) min_d2[k] = squared_distance(points[k], points[0]);

  while (selected.size() < n) {
    // Symmetric layouts give geometric ties that rounding splits either way; anything within
    // kTieTolerance of the farthest counts as tied and the lowest index wins.
    double far = -1.0;
    for (std::size_t k = 0; k < points.size(); ++k)
      if (!taken[k]) far = std::max(far, min_d2[k]);
    std::size_t best = 0;
    while (taken[best] || min_d2[best] < far * (1.0 - kTieTolerance)) ++best;
    selected.push_back(best);
    taken[best] = true;
    for (std::size_t k = 0; k < points.size(); ++k)
      min_d2[k] = std::min(min_d2[k], squared_distance(points[k], points[best]));
  }
  return selected;
}

KeypointSet extract_keypoints(const MassPointBody& body, std::size_t n) {
  KeypointSet out;
  out.source_indices = farthest_point_sampling(body.points, n);
  for (std::size_t idx : out.source_indices) out.coords.push_back(body.points[idx]);
  return out;
}

ActionCue render_action_cue(Vec2 grasp, Vec2 target, int frame_count, int grid) {
  if (frame_count < 1) throw InvalidArgument("cue needs at least one frame");
  constexpr double kTrail = 0.5;
  constexpr double kTip = 1.0;

  Frame disk(grid);
  const double radius = 1.0 / grid;
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      const Vec2 center{(c + 0.5) / grid, (r + 0.5) / grid};
      if (distance(center, grasp) <= radius) disk.at(r, c) = kTrail;
    }

  auto mark = [grid](Frame& f, Vec2 p, double value) {
    const auto [r, c] = cell_of(p, grid);
    f.at(r, c) = std::max(f.at(r, c), value);
  };

  ActionCue cue;
  Frame trail = disk;
  const double spacing = 0.5 / grid;
  for (int f = 1; f <= frame_count; ++f) {
    // Sub-segment between consecutive progress vertices; earlier frames' vertices stay on the trail.
    const Vec2 a = lerp(grasp, target, static_cast<double>(f - 1) / frame_count);
    const Vec2 b = lerp(grasp, target, static_cast<double>(f) / frame_count);
    const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / spacing)));
    for (int k = 0; k <= n; ++k) mark(trail, lerp(a, b, static_cast<double>(k) / n), kTrail);
    Frame shown = trail;
    mark(shown, b, kTip);
    cue.frames.push_back(std::move(shown));
  }
  return cue;
}

double soft_iou(const Frame& a, const Frame& b) {
  if (a.size != b.size || a.cells.size() != b.cells.size()) throw ShapeError("soft_iou: grid size mismatch");
  double inter = 0.0;
  double uni = 0.0;
  for (std::size_t k = 0; k < a.cells.size(); ++k) {
    inter += std::min(a.cells[k], b.cells[k]);
    uni += std::max(a.cells[k], b.cells[k]);
  }
  if (uni == 0.0) return 1.0;
  return inter / uni;
}

Region nonzero_bounds(const Frame& frame, int pad) {
  Region box{frame.size, 0, frame.size, 0};
  bool any = false;
  for (int r = 0; r < frame.size; ++r)
    for (int c = 0; c < frame.size; ++c) {
      if (frame.at(r, c) == 0.0) continue;
      any = true;
      box.row0 = std::min(box.row0, r);
      box.row1 = std::max(box.row1, r + 1);
      box.col0 = std::min(box.col0, c);
      box.col1 = std::max(box.col1, c + 1);
    }
  if (!any) return Region{};
  box.row0 = std::max(0, box.row0 - pad);
  box.col0 = std::max(0, box.col0 - pad);
  box.row1 = std::min(frame.size, box.row1 + pad);
  box.col1 = std::min(frame.size, box.col1 + pad);
  return box;
}

double mean_squared_error(const Frame& a, const Frame& b) {
  if (a.size != b.size || a.cells.size() != b.cells.size()) throw ShapeError("mse: grid size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.cells.size(); ++k) s += (a.cells[k] - b.cells[k]) * (a.cells[k] - b.cells[k]);
  return s / static_cast<double>(a.cells.size());
}

double psnr(const Frame& pred, const Frame& truth, std::optional<Region> region) {
  if (pred.size != truth.size || pred.cells.size() != truth.cells.size()) throw ShapeError("psnr: grid size mismatch");
  const Region box = region ? *region : nonzero_bounds(truth, 1);
  if (box.empty()) throw InvalidArgument("psnr: empty region");
  if (box.row0 < 0 || box.col0 < 0 || box.row1 > truth.size || box.col1 > truth.size)
    throw InvalidArgument("psnr: region outside the grid");
  double s = 0.0;
  for (int r = box.row0; r < box.row1; ++r)
    for (int c = box.col0; c < box.col1; ++c) {
      const double d = pred.at(r, c) - truth.at(r, c);
      s += d * d;
    }
  const double mse = s / static_cast<double>((box.row1 - box.row0) * (box.col1 - box.col0));
  if (mse < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace dreamplan
