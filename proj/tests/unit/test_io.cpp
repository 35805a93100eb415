#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "inlamh/errors.hpp"
#include "inlamh/io.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

using namespace inlamh;

namespace {

CsvTable parse(const std::string& text) {
  std::istringstream in(text);
  return CsvTable::parse(in);
}

}  // namespace

TEST_CASE("csv parsing") {
  const auto t = parse("id,name,value\n1,\"a, b\",2.5\n2,\"say \"\"hi\"\"\",NA\n3,c,\n");
  CHECK(t.header() == std::vector<std::string>{"id", "name", "value"});
  CHECK(t.rows() == 3);
  CHECK(t.column("name")[0] == "a, b");
  CHECK(t.column("name")[1] == "say \"hi\"");
  const Vector v = t.numeric("value");
  CHECK(v[0] == 2.5);
  CHECK(std::isnan(v[1]));
  CHECK(std::isnan(v[2]));
  CHECK(t.has_column("id"));
  CHECK_FALSE(t.has_column("ID"));
  CHECK_THROWS_AS(t.column("missing"), DimensionMismatch);
  CHECK_THROWS_AS(t.numeric("name"), ParseError);

  const auto crlf = parse("a,b\r\n1,2\r\n");
  CHECK(crlf.header() == std::vector<std::string>{"a", "b"});
  CHECK(crlf.numeric("b")[0] == 2.0);
}

TEST_CASE("malformed csv") {
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("a,b\n1,2,3\n"), ParseError);
  CHECK_THROWS_AS(parse("a,b\n\"1,2\n"), ParseError);
  CHECK_THROWS_AS(CsvTable::read("/nonexistent/table.csv"), ParseError);
}

TEST_CASE("double formatting round trips") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int k = 0; k < 2000; ++k) {
    const double x = std::pow(10.0, u(rng)) * (k % 2 ? -1.0 : 1.0);
    CHECK(std::strtod(format_double(x).c_str(), nullptr) == x);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(2.0) == "2");
  CHECK(std::strtod(format_double(0.1).c_str(), nullptr) == 0.1);
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "NaN");
}

TEST_CASE("csv rows quote when needed") {
  std::ostringstream out;
  write_csv_row(out, {"plain", "with,comma", "with \"quote\""});
  CHECK(out.str() == "plain,\"with,comma\",\"with \"\"quote\"\"\"\n");
  std::istringstream back("a,b,c\n" + out.str());
  const auto t = CsvTable::parse(back);
  CHECK(t.column("b")[0] == "with,comma");
  CHECK(t.column("c")[0] == "with \"quote\"");
}

TEST_CASE("marginal json round trip") {
  const auto g = gaussian_grid(0.3, 1.7);
  const auto path = std::filesystem::temp_directory_path() / "io_marginal.json";
  write_marginal_json(path, "beta.x", g);
  const auto [name, back] = read_marginal_json(path);
  CHECK(name == "beta.x");
  CHECK(back.values() == g.values());
  // densities are renormalized on construction, so only the last bits may move
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(back.densities()[i] - g.densities()[i]));
  CHECK(worst < 1e-14);
  CHECK_THROWS_AS(read_marginal_json("/nonexistent/m.json"), ParseError);
}
