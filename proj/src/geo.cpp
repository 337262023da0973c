#include "tomembed/geo.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "tomembed/error.hpp"

namespace tomembed::geo {
namespace {

constexpr double kA = 6378137.0;
constexpr double kF = 1.0 / 298.257223563;
constexpr double kK0 = 0.9996;
constexpr double kFalseEasting = 500000.0;
constexpr double kFalseNorthingSouth = 10000000.0;
constexpr double kDeg = std::numbers::pi / 180.0;

// Krueger series coefficients to sixth order in the third flattening.
struct TmSeries {
  double e;       // first eccentricity
  double rect_a;  // rectifying radius A
  std::array<double, 6> alpha;
  std::array<double, 6> beta;

  TmSeries() {
    const double n = kF / (2.0 - kF);
    const double n2 = n * n, n3 = n2 * n, n4 = n3 * n, n5 = n4 * n, n6 = n5 * n;
    e = std::sqrt(kF * (2.0 - kF));
    rect_a = kA / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    alpha = {
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    };
    beta = {
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    };
  }
};

const TmSeries& series() {
  static const TmSeries s;
  return s;
}

// tan(conformal latitude) from tan(geodetic latitude).
double taup(double tau, double e) {
  const double tau1 = std::hypot(1.0, tau);
  const double sig = std::sinh(e * std::atanh(e * tau / tau1));
  return std::hypot(1.0, sig) * tau - sig * tau1;
}

// Inverse of taup by Newton iteration.
double tauf(double taup_value, double e) {
  const double e2m = 1.0 - e * e;
  double tau = taup_value / e2m;
  for (int i = 0; i < 8; ++i) {
    const double tp = taup(tau, e);
    const double dtau = (taup_value - tp) / std::hypot(1.0, tp) * (1.0 + e2m * tau * tau) /
                        (e2m * std::hypot(1.0, tau));
    tau += dtau;
    if (std::abs(dtau) < 1e-15 * std::max(1.0, std::abs(tau))) break;
  }
  return tau;
}

void append_fixed(std::string& out, double v, int decimals) {
  char buf[64];
  // Avoid "-0.00" for values that round to zero.
  const double scale = std::pow(10.0, decimals);
  if (std::round(v * scale) == 0.0) v = 0.0;
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, decimals);
  if (ec != std::errc{}) throw std::runtime_error("coordinate formatting failed");
  out.append(buf, end);
}

template <typename Ring>
std::string ring_wkt(const Ring& ring, int decimals) {
  std::string s = "POLYGON ((";
  for (std::size_t i = 0; i < ring.size(); ++i) {
    if (i > 0) s += ", ";
    append_fixed(s, ring[i][0], decimals);
    s += ' ';
    append_fixed(s, ring[i][1], decimals);
  }
  s += "))";
  return s;
}

std::vector<std::uint8_t> ring_wkb(std::span<const std::array<double, 2>> ring) {
  std::vector<std::uint8_t> out;
  out.reserve(13 + ring.size() * 16);
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto put_f64 = [&](double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  };
  out.push_back(1);
  put_u32(3);
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(ring.size()));
  for (const auto& p : ring) {
    put_f64(p[0]);
    put_f64(p[1]);
  }
  return out;
}

std::array<std::array<double, 2>, 5> as_pairs(const GeoPolygon& p) {
  std::array<std::array<double, 2>, 5> r{};
  for (std::size_t i = 0; i < 5; ++i) r[i] = {p.ring[i].lon, p.ring[i].lat};
  return r;
}

std::array<std::array<double, 2>, 5> as_pairs(const UtmPolygon& p) {
  std::array<std::array<double, 2>, 5> r{};
  for (std::size_t i = 0; i < 5; ++i) r[i] = {p.ring[i].easting, p.ring[i].northing};
  return r;
}

}  // namespace

UtmZone parse_utm_crs(std::string_view crs) {
  constexpr std::string_view prefix = "EPSG:";
  if (crs.substr(0, prefix.size()) != prefix) {
    throw std::invalid_argument("not an EPSG CRS: '" + std::string(crs) + "'");
  }
  const auto digits = crs.substr(prefix.size());
  int code = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), code);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
    throw std::invalid_argument("malformed EPSG code: '" + std::string(crs) + "'");
  }
  if (code >= 32601 && code <= 32660) return {code - 32600, true};
  if (code >= 32701 && code <= 32760) return {code - 32700, false};
  throw std::invalid_argument("not a WGS84 / UTM zone: '" + std::string(crs) + "'");
}

bool is_utm_crs(std::string_view crs) {
  try {
    parse_utm_crs(crs);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

double normalize_longitude(double lon) {
  double r = std::fmod(lon, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

UtmPolygon bbox_to_utm(const AffineTransform& transform, std::string crs, const PixelBox& bbox) {
  transform.validate();
  if (bbox.row_end <= bbox.row_start || bbox.col_end <= bbox.col_start) {
    throw std::invalid_argument("degenerate pixel bbox");
  }
  auto corner = [&](std::int32_t row, std::int32_t col) {
    return UtmPoint{transform.origin_easting + col * transform.pixel_size,
                    transform.origin_northing - row * transform.pixel_size};
  };
  UtmPolygon p;
  p.crs = std::move(crs);
  p.ring = {corner(bbox.row_start, bbox.col_start), corner(bbox.row_start, bbox.col_end),
            corner(bbox.row_end, bbox.col_end), corner(bbox.row_end, bbox.col_start),
            corner(bbox.row_start, bbox.col_start)};
  return p;
}

LonLat utm_to_wgs84(const UtmPoint& point, std::string_view crs) {
  return utm_to_wgs84(point, parse_utm_crs(crs));
}

LonLat utm_to_wgs84(const UtmPoint& point, const UtmZone& zone) {
  const TmSeries& s = series();
  const double northing = point.northing - (zone.north ? 0.0 : kFalseNorthingSouth);
  const double xi = northing / (kK0 * s.rect_a);
  const double eta = (point.easting - kFalseEasting) / (kK0 * s.rect_a);

  double xip = xi;
  double etap = eta;
  for (int j = 1; j <= 6; ++j) {
    const double b = s.beta[static_cast<std::size_t>(j - 1)];
    xip -= b * std::sin(2 * j * xi) * std::cosh(2 * j * eta);
    etap -= b * std::cos(2 * j * xi) * std::sinh(2 * j * eta);
  }
  const double sinh_etap = std::sinh(etap);
  const double cos_xip = std::cos(xip);
  const double tau_conformal = std::sin(xip) / std::hypot(sinh_etap, cos_xip);
  const double lat = std::atan(tauf(tau_conformal, s.e)) / kDeg;
  const double dlon = std::atan2(sinh_etap, cos_xip) / kDeg;
  return {normalize_longitude(zone.central_meridian() + dlon), lat};
}

UtmPoint wgs84_to_utm(const LonLat& point, std::string_view crs) {
  return wgs84_to_utm(point, parse_utm_crs(crs));
}

UtmPoint wgs84_to_utm(const LonLat& point, const UtmZone& zone) {
  const TmSeries& s = series();
  const double lat = point.lat * kDeg;
  const double dlon = normalize_longitude(point.lon - zone.central_meridian()) * kDeg;
  const double tp = taup(std::tan(lat), s.e);
  const double xip = std::atan2(tp, std::cos(dlon));
  const double etap = std::asinh(std::sin(dlon) / std::hypot(tp, std::cos(dlon)));
  double xi = xip;
  double eta = etap;
  for (int j = 1; j <= 6; ++j) {
    const double a = s.alpha[static_cast<std::size_t>(j - 1)];
    xi += a * std::sin(2 * j * xip) * std::cosh(2 * j * etap);
    eta += a * std::cos(2 * j * xip) * std::sinh(2 * j * etap);
  }
  return {kFalseEasting + kK0 * s.rect_a * eta,
          (zone.north ? 0.0 : kFalseNorthingSouth) + kK0 * s.rect_a * xi};
}

FragmentGeometry fragment_geometry(const AffineTransform& transform, std::string_view crs,
                                   const PixelBox& bbox) {
  const UtmZone zone = parse_utm_crs(crs);
  FragmentGeometry g;
  g.utm_footprint = bbox_to_utm(transform, std::string(crs), bbox);
  for (std::size_t i = 0; i < 5; ++i) g.geometry.ring[i] = utm_to_wgs84(g.utm_footprint.ring[i], zone);
  const double centre_row = 0.5 * (bbox.row_start + bbox.row_end);
  const double centre_col = 0.5 * (bbox.col_start + bbox.col_end);
  const LonLat c = utm_to_wgs84({transform.origin_easting + centre_col * transform.pixel_size,
                                 transform.origin_northing - centre_row * transform.pixel_size},
                                zone);
  g.centre_lat = c.lat;
  g.centre_lon = c.lon;
  return g;
}

std::string to_wkt(const GeoPolygon& polygon) { return ring_wkt(as_pairs(polygon), 7); }
std::string to_wkt(const UtmPolygon& polygon) { return ring_wkt(as_pairs(polygon), 2); }

std::vector<std::uint8_t> to_wkb(const GeoPolygon& polygon) {
  const auto r = as_pairs(polygon);
  return ring_wkb(r);
}
std::vector<std::uint8_t> to_wkb(const UtmPolygon& polygon) {
  const auto r = as_pairs(polygon);
  return ring_wkb(r);
}

std::vector<std::array<double, 2>> parse_wkt_polygon(std::string_view wkt) {
  auto fail = [&]() -> std::vector<std::array<double, 2>> {
    throw FormatError("malformed WKT polygon: '" + std::string(wkt.substr(0, 80)) + "'");
  };
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < wkt.size() && (wkt[pos] == ' ' || wkt[pos] == '\t' || wkt[pos] == '\n')) ++pos;
  };
  auto expect = [&](char c) {
    skip_ws();
    if (pos >= wkt.size() || wkt[pos] != c) fail();
    ++pos;
  };
  skip_ws();
  constexpr std::string_view kw = "POLYGON";
  if (wkt.substr(pos, kw.size()) != kw) fail();
  pos += kw.size();
  expect('(');
  expect('(');
  std::vector<std::array<double, 2>> ring;
  while (true) {
    std::array<double, 2> p{};
    for (double& v : p) {
      skip_ws();
      auto [ptr, ec] = std::from_chars(wkt.data() + pos, wkt.data() + wkt.size(), v);
      if (ec != std::errc{}) fail();
      pos = static_cast<std::size_t>(ptr - wkt.data());
    }
    ring.push_back(p);
    skip_ws();
    if (pos < wkt.size() && wkt[pos] == ',') {
      ++pos;
      continue;
    }
    break;
  }
  expect(')');
  expect(')');
  skip_ws();
  if (pos != wkt.size()) fail();
  return ring;
}

std::vector<std::array<double, 2>> parse_wkb_polygon(std::span<const std::uint8_t> wkb) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (n > wkb.size() - pos) throw FormatError("truncated WKB polygon");
  };
  need(1);
  const bool little = wkb[pos++] == 1;
  auto u32 = [&] {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t b = wkb[pos + static_cast<std::size_t>(little ? i : 3 - i)];
      v |= b << (8 * i);
    }
    pos += 4;
    return v;
  };
  auto f64 = [&] {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      const std::uint64_t b = wkb[pos + static_cast<std::size_t>(little ? i : 7 - i)];
      bits |= b << (8 * i);
    }
    pos += 8;
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  };
  if (u32() != 3) throw FormatError("WKB geometry is not a polygon");
  if (u32() != 1) throw FormatError("WKB polygon must have exactly one ring");
  const std::uint32_t n = u32();
  need(static_cast<std::size_t>(n) * 16);
  std::vector<std::array<double, 2>> ring(n);
  for (auto& p : ring) {
    p[0] = f64();
    p[1] = f64();
  }
  if (pos != wkb.size()) throw FormatError("trailing bytes after WKB polygon");
  return ring;
}

bool is_valid_geo_ring(std::span<const std::array<double, 2>> ring) {
  if (ring.size() != 5 || ring.front() != ring.back()) return false;
  for (const auto& p : ring) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) return false;
    if (std::abs(p[1]) > 90.0 || p[0] <= -180.0 || p[0] > 180.0) return false;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      if (ring[i] == ring[j]) return false;
    }
  }
  return true;
}

}  // namespace tomembed::geo
