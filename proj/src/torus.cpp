#include "tclt/torus.hpp"

#include "tclt/errors.hpp"

namespace tclt {

TorusPoint::TorusPoint(const Vec2& raw) {
  if (!raw.allFinite()) throw ValidationError("wrap: non-finite coordinate");
  x_ = {wrap_coord(raw.x()), wrap_coord(raw.y())};
}

TorusPoint wrap(const Vec2& raw) { return TorusPoint(raw); }

TorusPoint wrap(std::span<const double> raw) {
  if (raw.size() != 2) throw ValidationError("wrap: only d = 2 is supported");
  return TorusPoint(Vec2(raw[0], raw[1]));
}

}  // namespace tclt
