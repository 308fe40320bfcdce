#pragma once

namespace advart {

// Axis-aligned box in normalized image coordinates (center + extent).
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  int class_id = 0;
};

}  // namespace advart
