#include "tomembed/geo.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tomembed/error.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed::geo {
namespace {

struct ProjCase {
  const char* crs;
  double easting, northing, lon, lat;
};

// pyproj 3 (PROJ) Transformer.from_crs(<crs>, "EPSG:4326", always_xy=True).
const ProjCase kPyproj[] = {
    {"EPSG:32633", 500000, 0, 15.0, 0.0},
    {"EPSG:32633", 500000, 4427757.22, 15.0, 40.0000000114},
    {"EPSG:32633", 300000, 5000000, 12.4568765102, 45.1251538476},
    {"EPSG:32633", 308440, 4991560, 12.5673231513, 45.0515861014},
    {"EPSG:32633", 700000, 1000000, 16.8195225088, 9.0420470664},
    {"EPSG:32601", 166021.44, 0, 179.9999999724, 0.0},
    {"EPSG:32601", 400000, 7000000, -178.9823020049, 63.1154898700},
    {"EPSG:32660", 833978.56, 100000, -179.9996291050, 0.9034822511},
    {"EPSG:32660", 500000, 9000000, 177.0, 81.0608809750},
    {"EPSG:32733", 500000, 10000000, 15.0, 0.0},
    {"EPSG:32733", 250000, 6000000, 12.2225397139, -36.1125055601},
    {"EPSG:32733", 720000, 1200000, 25.4678740151, -79.0916885262},
};

TEST(Utm, MatchesPyproj) {
  for (const auto& c : kPyproj) {
    const auto ll = utm_to_wgs84({c.easting, c.northing}, c.crs);
    EXPECT_NEAR(ll.lon, c.lon, 1e-7) << c.crs << " " << c.easting << " " << c.northing;
    EXPECT_NEAR(ll.lat, c.lat, 1e-7) << c.crs << " " << c.easting << " " << c.northing;
  }
}

TEST(Utm, CentralMeridianOriginIsExact) {
  const auto ll = utm_to_wgs84({500000.0, 0.0}, "EPSG:32633");
  EXPECT_NEAR(ll.lon, 15.0, 1e-7);
  EXPECT_NEAR(ll.lat, 0.0, 1e-7);
}

TEST(Utm, ForwardMatchesPyproj) {
  const auto p = wgs84_to_utm({15.0, 40.0}, "EPSG:32633");
  EXPECT_NEAR(p.easting, 500000.0000000013, 1e-3);
  EXPECT_NEAR(p.northing, 4427757.218738374, 1e-3);
}

TEST(Utm, RoundTripAcrossZones) {
  SplitMix64 rng(99);
  for (const char* crs : {"EPSG:32601", "EPSG:32633", "EPSG:32660", "EPSG:32733"}) {
    const UtmZone zone = parse_utm_crs(crs);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double lon = normalize_longitude(zone.central_meridian() + (rng.next_unit() * 6.0 - 3.0));
      const double lat = zone.north ? rng.next_unit() * 84.0 : -80.0 * rng.next_unit();
      const UtmPoint p = wgs84_to_utm({lon, lat}, zone);
      const UtmPoint q = wgs84_to_utm(utm_to_wgs84(p, zone), zone);
      worst = std::max(worst, std::hypot(p.easting - q.easting, p.northing - q.northing));
    }
    EXPECT_LE(worst, 0.5) << crs;
  }
}

TEST(Utm, CrsParsing) {
  EXPECT_EQ(parse_utm_crs("EPSG:32633").zone, 33);
  EXPECT_TRUE(parse_utm_crs("EPSG:32633").north);
  EXPECT_FALSE(parse_utm_crs("EPSG:32701").north);
  EXPECT_EQ(parse_utm_crs("EPSG:32760").epsg(), 32760);
  for (const char* bad : {"EPSG:4326", "EPSG:32600", "EPSG:32661", "epsg", "EPSG:3263x", ""}) {
    EXPECT_FALSE(is_utm_crs(bad)) << bad;
    EXPECT_THROW(parse_utm_crs(bad), std::invalid_argument) << bad;
  }
}

TEST(Geo, NormalizeLongitude) {
  EXPECT_EQ(normalize_longitude(180.0), 180.0);
  EXPECT_EQ(normalize_longitude(-180.0), 180.0);
  EXPECT_DOUBLE_EQ(normalize_longitude(181.0), -179.0);
  EXPECT_DOUBLE_EQ(normalize_longitude(-541.0), 179.0);
}

TEST(Geo, BboxToUtm) {
  const AffineTransform t{300000.0, 5000000.0, 10.0};
  const auto poly = bbox_to_utm(t, "EPSG:32633", {0, 0, 224, 224});
  EXPECT_EQ(poly.ring[0], (UtmPoint{300000.0, 5000000.0}));
  EXPECT_EQ(poly.ring[1], (UtmPoint{302240.0, 5000000.0}));
  EXPECT_EQ(poly.ring[2], (UtmPoint{302240.0, 4997760.0}));
  EXPECT_EQ(poly.ring[3], (UtmPoint{300000.0, 4997760.0}));
  EXPECT_EQ(poly.ring[4], poly.ring[0]);
  EXPECT_THROW(bbox_to_utm(t, "EPSG:32633", {5, 5, 5, 9}), std::invalid_argument);
}

TEST(Geo, FragmentGeometryCentre) {
  const AffineTransform t{300000.0, 5000000.0, 10.0};
  const auto g = fragment_geometry(t, "EPSG:32633", {1680, 1688, 1688, 1696});
  // Centre pixel (1684, 1692) -> (316920, 4983160).
  const auto c = utm_to_wgs84({316920.0, 4983160.0}, "EPSG:32633");
  EXPECT_EQ(g.centre_lon, c.lon);
  EXPECT_EQ(g.centre_lat, c.lat);
  EXPECT_TRUE(is_valid_geo_ring(parse_wkb_polygon(to_wkb(g.geometry))));
}

TEST(Geo, AntimeridianFootprintStaysWrapped) {
  const AffineTransform t{833000.0, 100000.0, 10.0};
  const auto g = fragment_geometry(t, "EPSG:32660", {0, 0, 224, 224});
  for (const auto& p : g.geometry.ring) {
    EXPECT_GT(p.lon, -180.0);
    EXPECT_LE(p.lon, 180.0);
  }
}

TEST(Wkt, Formatting) {
  GeoPolygon g;
  g.ring = {LonLat{15.0, 0.0}, {15.01, 0.0}, {15.01, -0.01}, {15.0, -0.01}, {15.0, 0.0}};
  EXPECT_EQ(to_wkt(g),
            "POLYGON ((15.0000000 0.0000000, 15.0100000 0.0000000, 15.0100000 -0.0100000, "
            "15.0000000 -0.0100000, 15.0000000 0.0000000))");
  UtmPolygon u;
  u.crs = "EPSG:32633";
  u.ring = {UtmPoint{1, 2}, {3.005, 2}, {3, 4}, {1, 4}, {1, 2}};
  EXPECT_EQ(parse_wkt_polygon(to_wkt(u)).size(), 5u);
  EXPECT_EQ(to_wkt(u).substr(0, 20), "POLYGON ((1.00 2.00,");
}

TEST(Wkt, ParsesAndRejects) {
  const auto ring = parse_wkt_polygon("POLYGON((0 0, 1 0, 1 1, 0 1, 0 0))");
  ASSERT_EQ(ring.size(), 5u);
  EXPECT_EQ(ring[2], (std::array<double, 2>{1, 1}));
  EXPECT_THROW(parse_wkt_polygon("POINT (1 2)"), FormatError);
  EXPECT_THROW(parse_wkt_polygon("POLYGON ((0 0, 1 0"), FormatError);
}

TEST(Wkb, RoundTripsAndRejects) {
  GeoPolygon g;
  g.ring = {LonLat{1.5, 2.5}, {3, 2.5}, {3, 4}, {1.5, 4}, {1.5, 2.5}};
  const auto wkb = to_wkb(g);
  EXPECT_EQ(wkb.size(), 1u + 4 + 4 + 4 + 5 * 16);
  EXPECT_EQ(wkb[0], 1);
  const auto ring = parse_wkb_polygon(wkb);
  ASSERT_EQ(ring.size(), 5u);
  EXPECT_EQ(ring[1], (std::array<double, 2>{3, 2.5}));
  auto cut = wkb;
  cut.pop_back();
  EXPECT_THROW(parse_wkb_polygon(cut), FormatError);
  auto longer = wkb;
  longer.push_back(0);
  EXPECT_THROW(parse_wkb_polygon(longer), FormatError);
}

TEST(Ring, Validity) {
  using Ring = std::vector<std::array<double, 2>>;
  EXPECT_TRUE(is_valid_geo_ring(Ring{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}));
  EXPECT_FALSE(is_valid_geo_ring(Ring{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0.5}}));
  EXPECT_FALSE(is_valid_geo_ring(Ring{{0, 0}, {1, 0}, {1, 1}, {0, 0}}));
  EXPECT_FALSE(is_valid_geo_ring(Ring{{0, 0}, {1, 0}, {1, 0}, {0, 1}, {0, 0}}));
  EXPECT_FALSE(is_valid_geo_ring(Ring{{0, 0}, {1, 0}, {1, 91}, {0, 1}, {0, 0}}));
  EXPECT_FALSE(is_valid_geo_ring(Ring{{0, 0}, {1, 0}, {NAN, 1}, {0, 1}, {0, 0}}));
}

}  // namespace
}  // namespace tomembed::geo
