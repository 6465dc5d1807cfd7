#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dbce/dataset.hpp"

using namespace dbce;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("load_csv parses a minimal file") {
  const std::string path = temp_path("dbce_min.csv");
  write_file(path, "y,d,x1\n1.5,1,0.25\n-2,0,1\n3,1,-0.5\n");
  const Dataset data = load_csv(path);
  CHECK(data.n() == 3);
  CHECK(data.k() == 1);
  CHECK(data.y[0] == doctest::Approx(1.5));
  CHECK(data.d[1] == 0);
  CHECK(data.x(2, 0) == doctest::Approx(-0.5));
  std::remove(path.c_str());
}

TEST_CASE("load_csv rejects malformed input") {
  const std::string path = temp_path("dbce_bad.csv");

  SUBCASE("invalid treatment value") {
    write_file(path, "y,d,x1\n1,2,0\n2,0,1\n");
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("invalid treatment value"),
                         std::invalid_argument);
  }
  SUBCASE("non-numeric cell") {
    write_file(path, "y,d,x1\n1,1,abc\n2,0,1\n");
    CHECK_THROWS_AS(load_csv(path), std::invalid_argument);
  }
  SUBCASE("blank cell") {
    write_file(path, "y,d,x1\n1,1,\n2,0,1\n");
    CHECK_THROWS_AS(load_csv(path), std::invalid_argument);
  }
  SUBCASE("wrong header") {
    write_file(path, "y,d,z1\n1,1,0\n2,0,1\n");
    CHECK_THROWS_AS(load_csv(path), std::invalid_argument);
  }
  SUBCASE("missing column in a row") {
    write_file(path, "y,d,x1,x2\n1,1,0\n2,0,1,2\n");
    CHECK_THROWS_AS(load_csv(path), std::invalid_argument);
  }
  SUBCASE("fewer than 2 rows") {
    write_file(path, "y,d,x1\n1,1,0\n");
    CHECK_THROWS_AS(load_csv(path), std::invalid_argument);
  }
  SUBCASE("single-group data") {
    write_file(path, "y,d,x1\n1,1,0\n2,1,1\n");
    CHECK_THROWS_AS(load_csv(path), std::invalid_argument);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv round trip preserves values") {
  MatrixXd x(5, 2);
  x << 0.1, -1.75, 2.0, 0.333333333333333315, -4.5, 1e-13, 7.25, -0.875, 3.0, 0.0625;
  VectorXi d(5);
  d << 1, 0, 1, 0, 1;
  VectorXd y(5);
  y << 1.25, -2.5, 0.1, 19.0, -0.3333333333333333;
  const Dataset original = Dataset::make(x, d, y);

  const std::string path = temp_path("dbce_roundtrip.csv");
  write_csv(original, path);
  const Dataset parsed = load_csv(path);

  CHECK(parsed.n() == original.n());
  CHECK(parsed.k() == original.k());
  CHECK((parsed.x - original.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.y - original.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.d - original.d).cwiseAbs().maxCoeff() == 0);

  // a second write is byte-identical
  const std::string path2 = temp_path("dbce_roundtrip2.csv");
  write_csv(parsed, path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("Dataset::make enforces invariants") {
  MatrixXd x(2, 1);
  x << 0.0, 1.0;
  VectorXd y(2);
  y << 1.0, 2.0;

  VectorXi d_ok(2);
  d_ok << 1, 0;
  CHECK_NOTHROW(Dataset::make(x, d_ok, y));

  VectorXi d_bad(2);
  d_bad << 1, 2;
  CHECK_THROWS_AS(Dataset::make(x, d_bad, y), std::invalid_argument);

  VectorXi d_one_group(2);
  d_one_group << 0, 0;
  CHECK_THROWS_AS(Dataset::make(x, d_one_group, y), std::invalid_argument);

  VectorXd y_nan(2);
  y_nan << 1.0, std::nan("");
  CHECK_THROWS_AS(Dataset::make(x, d_ok, y_nan), std::invalid_argument);
}
