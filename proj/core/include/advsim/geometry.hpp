#pragma once

namespace advsim {

// Axis-aligned box in image-fraction units: centre and extents.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

}  // namespace advsim
