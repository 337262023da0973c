#pragma once

// Fragment footprints: pixel bbox -> UTM polygon -> WGS84 polygon, plus
// WKT/WKB encoding of both.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomembed/grid_raster.hpp"

namespace tomembed::geo {

// End-exclusive pixel box [row_start, col_start, row_end, col_end].
struct PixelBox {
  std::int32_t row_start = 0;
  std::int32_t col_start = 0;
  std::int32_t row_end = 0;
  std::int32_t col_end = 0;

  bool operator==(const PixelBox&) const = default;
  auto operator<=>(const PixelBox&) const = default;
};

struct UtmPoint {
  double easting = 0.0;
  double northing = 0.0;
  bool operator==(const UtmPoint&) const = default;
};

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
  bool operator==(const LonLat&) const = default;
};

// Closed 5-point ring TL -> TR -> BR -> BL -> TL.
struct UtmPolygon {
  std::string crs;
  std::array<UtmPoint, 5> ring{};
  bool operator==(const UtmPolygon&) const = default;
};

struct GeoPolygon {
  std::array<LonLat, 5> ring{};
  bool operator==(const GeoPolygon&) const = default;
};

struct UtmZone {
  int zone = 0;  // 1..60
  bool north = true;
  int epsg() const { return (north ? 32600 : 32700) + zone; }
  double central_meridian() const { return -183.0 + 6.0 * zone; }
};

// Accepts "EPSG:326zz" / "EPSG:327zz"; throws std::invalid_argument otherwise.
UtmZone parse_utm_crs(std::string_view crs);
bool is_utm_crs(std::string_view crs);

// Longitude wrapped to (-180, 180].
double normalize_longitude(double lon);

UtmPolygon bbox_to_utm(const AffineTransform& transform, std::string crs, const PixelBox& bbox);

LonLat utm_to_wgs84(const UtmPoint& point, std::string_view crs);
LonLat utm_to_wgs84(const UtmPoint& point, const UtmZone& zone);
UtmPoint wgs84_to_utm(const LonLat& point, std::string_view crs);
UtmPoint wgs84_to_utm(const LonLat& point, const UtmZone& zone);

struct FragmentGeometry {
  GeoPolygon geometry;
  UtmPolygon utm_footprint;
  double centre_lat = 0.0;
  double centre_lon = 0.0;
};

FragmentGeometry fragment_geometry(const AffineTransform& transform, std::string_view crs,
                                   const PixelBox& bbox);

// "POLYGON ((x y, ...))", 7 decimals for degrees, 2 for meters.
std::string to_wkt(const GeoPolygon& polygon);
std::string to_wkt(const UtmPolygon& polygon);

// Little-endian OGC WKB, geometry type 3, one ring.
std::vector<std::uint8_t> to_wkb(const GeoPolygon& polygon);
std::vector<std::uint8_t> to_wkb(const UtmPolygon& polygon);

// Single-ring polygon parsers. Rings of any length are accepted so that
// malformed footprints can be reported by validation rather than rejected.
std::vector<std::array<double, 2>> parse_wkt_polygon(std::string_view wkt);
std::vector<std::array<double, 2>> parse_wkb_polygon(std::span<const std::uint8_t> wkb);

// Exactly five points, closed, four distinct corners, finite, |lat| <= 90,
// lon in (-180, 180].
bool is_valid_geo_ring(std::span<const std::array<double, 2>> ring);

}  // namespace tomembed::geo
