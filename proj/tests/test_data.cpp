#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gleamcast/csv_io.hpp"
#include "gleamcast/data.hpp"
#include "gleamcast/errors.hpp"

using namespace gleamcast;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("gleamcast_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return dir / name;
  }
  fs::path dir;
};

}  // namespace

TEST(Date, ParseAndFormat) {
  EXPECT_EQ(Date::parse("2020-03-01").days, 18322);
  EXPECT_EQ((Date{18322} + 30).iso(), "2020-03-31");
  EXPECT_EQ(Date::parse("2024-02-29").iso(), "2024-02-29");
  EXPECT_THROW(Date::parse("2023-02-29"), DataError);
  EXPECT_THROW(Date::parse("2020-3-01"), DataError);
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(csv::format_double(3.0), "3");
  EXPECT_EQ(csv::format_double(0.1), "0.1");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = n(rng);
    EXPECT_EQ(std::stod(csv::format_double(v)), v);
  }
}

TEST_F(TempDir, ObservationsRoundTrip) {
  Observations obs;
  obs.locations = {"CA", "NY", "TX"};
  obs.start = Date::parse("2020-05-24");
  obs.values = Array2(10, 3);
  for (std::size_t i = 0; i < obs.values.size(); ++i) obs.values[i] = static_cast<double>(i * 7 % 13);
  write_observations(dir / "obs.csv", obs);
  const auto back = read_observations(dir / "obs.csv");
  EXPECT_EQ(back.locations, obs.locations);
  EXPECT_EQ(back.start, obs.start);
  EXPECT_EQ(back.values, obs.values);
  EXPECT_EQ(back.at(obs.start + 2, 1), obs.values(2, 1));
  EXPECT_THROW(back.at(obs.start + 10, 0), DataError);
}

TEST_F(TempDir, ObservationGapsAreListed) {
  const auto p = write("obs.csv",
                       "date,location,value\n"
                       "2020-06-01,A,1\n2020-06-01,B,2\n"
                       "2020-06-02,A,1\n"
                       "2020-06-03,A,1\n2020-06-03,B,2\n");
  try {
    read_observations(p);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2020-06-02,B"), std::string::npos) << e.what();
  }
}

TEST_F(TempDir, ObservationDuplicatesAndHeader) {
  EXPECT_THROW(read_observations(write("dup.csv", "date,location,value\n2020-06-01,A,1\n2020-06-01,A,2\n")),
               DataError);
  EXPECT_THROW(read_observations(write("hdr.csv", "day,location,value\n2020-06-01,A,1\n")), DataError);
  EXPECT_THROW(read_observations(write("num.csv", "date,location,value\n2020-06-01,A,x\n")), DataError);
  EXPECT_THROW(read_observations(dir / "missing.csv"), DataError);
}

TEST_F(TempDir, CubeRoundTripPoint) {
  ForecastCube cube;
  cube.locations = {"A", "B"};
  cube.horizons = 2;
  cube.issues = {Date{100}, Date{107}};
  cube.point = {Array2{{1, 2}, {3, 4}}, Array2{{5.5, 6}, {7, 8}}};
  write_cube(dir / "cube.csv", cube);
  const auto back = read_cube(dir / "cube.csv", cube.locations);
  EXPECT_EQ(back.issues, cube.issues);
  EXPECT_EQ(back.point, cube.point);
  EXPECT_EQ(back.horizons, 2u);
  EXPECT_FALSE(back.has_members());
  EXPECT_EQ(back.value(1, 0, 1), 5.5);
  EXPECT_EQ(*back.find(Date{107}), 1u);
  EXPECT_FALSE(back.find(Date{101}).has_value());
}

TEST_F(TempDir, CubeMembersAggregateToWeightedMean) {
  const auto p = write("cube.csv",
                       "issue_date,location,horizon_weeks,value,member_id,weight\n"
                       "2020-06-01,A,1,10,0,1\n"
                       "2020-06-01,A,1,20,1,3\n");
  const auto cube = read_cube(p, {"A"});
  ASSERT_TRUE(cube.has_members());
  EXPECT_DOUBLE_EQ(cube.point[0](0, 0), 17.5);
  EXPECT_DOUBLE_EQ(cube.weights[0][0], 0.25);
  write_cube(dir / "again.csv", cube);
  const auto back = read_cube(dir / "again.csv", {"A"});
  EXPECT_DOUBLE_EQ(back.point[0](0, 0), 17.5);
}

TEST_F(TempDir, CubeRejectsMissingCells) {
  const auto p = write("cube.csv",
                       "issue_date,location,horizon_weeks,value\n"
                       "2020-06-01,A,1,10\n2020-06-01,A,2,10\n2020-06-01,B,1,10\n");
  EXPECT_THROW(read_cube(p, {"A", "B"}), DataError);
  EXPECT_THROW(read_cube(write("u.csv", "issue_date,location,horizon_weeks,value\n2020-06-01,Z,1,1\n"), {"A"}),
               DataError);
}

TEST(Cube, Validate) {
  ForecastCube cube;
  cube.locations = {"A"};
  cube.horizons = 1;
  cube.issues = {Date{10}, Date{5}};
  cube.point = {Array2(1, 1), Array2(1, 1)};
  EXPECT_THROW(cube.validate(), ContractError);
  cube.issues = {Date{5}, Date{10}};
  EXPECT_NO_THROW(cube.validate());
  cube.members = {{Array2(1, 1)}, {Array2(1, 1)}};
  cube.weights = {{0.5}, {1.0}};
  EXPECT_THROW(cube.validate(), ContractError);
}
