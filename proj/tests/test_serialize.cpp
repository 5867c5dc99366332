#include <catch2/catch_amalgamated.hpp>

#include "roughflow/serialize.hpp"

using namespace roughflow;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("operator JSON round trip: {dim, row-major entries}", "[serialize]") {
    MatrixXd m(2, 2);
    m << 1.0, 2.5, -3.25, 0.125;
    LinearOperator op(m);
    json j = to_json(op);
    CHECK(j.at("dim") == 2);
    CHECK(j.at("entries").size() == 4);
    CHECK(j.at("entries")[1].get<double>() == 2.5); // row-major
    LinearOperator back = linear_operator_from_json(j);
    CHECK((back.m - m).norm() == 0.0);

    json bad = j;
    bad["entries"] = std::vector<double>{1.0, 2.0};
    CHECK_THROWS_AS(linear_operator_from_json(bad), IoError);
}

TEST_CASE("base64 doubles are bit-exact", "[serialize]") {
    std::vector<double> xs{0.1, -1e300, 5e-324, 0.0, 3.141592653589793};
    auto back = doubles_from_base64(doubles_to_base64(xs));
    REQUIRE(back.size() == xs.size());
    for (size_t i = 0; i < xs.size(); ++i)
        CHECK(std::memcmp(&back[i], &xs[i], sizeof(double)) == 0);
}

TEST_CASE("velocity field JSON and CSV", "[serialize]") {
    auto b = make_basis(2, 1);
    GaussianStream s(3, 0);
    VelocityField u(b, s.normal_vector(0, 0, b->size()));
    VelocityField back = velocity_field_from_json(to_json(u));
    CHECK((back.c - u.c).norm() == 0.0);
    CHECK(back.basis->cutoff() == 1);

    std::string csv = velocity_field_to_csv(u);
    CHECK(csv.rfind("kx,ky,kz,polarization,coefficient\n", 0) == 0);
    const size_t rows = std::count(csv.begin(), csv.end(), '\n');
    CHECK(rows == static_cast<size_t>(b->size()) + 1);
}

TEST_CASE("fast path: bit-exact JSON replay and CSV shape", "[serialize]") {
    LinearOperator c(-MatrixXd::Identity(2, 2)), q(MatrixXd::Identity(2, 2));
    FastPath p = simulate_fast_path(c, q, 0.25, VectorXd::LinSpaced(17, 0.0, 1.0), 77, 2);
    FastPath back = fast_path_from_json(to_json(p));
    CHECK(back.epsilon == p.epsilon);
    for (size_t i = 0; i < p.w.size(); ++i) CHECK(back.w[i] == p.w[i]);
    for (size_t i = 0; i < p.dW.size(); ++i) CHECK(back.dW[i] == p.dW[i]);

    std::string csv = fast_path_to_csv(p);
    CHECK(csv.rfind("t,w0,w1,dW0,dW1\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 18);
}

TEST_CASE("rough path JSON round trip preserves both levels", "[serialize]") {
    GaussianStream s(11, 0);
    std::vector<VectorXd> pts{VectorXd::Zero(2)};
    for (int i = 0; i < 32; ++i) pts.push_back(pts.back() + 0.1 * s.normal_vector(i, 0, 2));
    RoughPath rp = canonical_lift(pts, 1.0, 4);
    RoughPath back = rough_path_from_json(to_json(rp));
    CHECK(back.grid.level == rp.grid.level);
    for (int i = 0; i < rp.grid.n_points(); ++i) CHECK(back.points[i] == rp.points[i]);
    for (size_t m = 0; m < rp.level2.size(); ++m)
        for (size_t i = 0; i < rp.level2[m].size(); ++i)
            CHECK(back.level2[m][i] == rp.level2[m][i]);

    std::string csv = rough_path_to_csv(rp);
    CHECK(csv.rfind("s,t,values\n", 0) == 0);
}

TEST_CASE("limit lift JSON carries the drift tensors", "[serialize]") {
    LinearOperator c(-MatrixXd::Identity(2, 2)), q(MatrixXd::Identity(2, 2));
    std::vector<VectorXd> dw(16, VectorXd::Zero(2));
    LimitLift l = limit_lift(dw, 1.0, c, q, 2, LiftForm::ito);
    json j = to_json(l);
    CHECK(j.at("form") == "ito");
    CHECK(j.at("D").at("dim") == 2);
    CHECK(j.at("M").at("entries")[0].get<double>() == 0.0);
}

TEST_CASE("trajectory CSV has one column block per field", "[serialize]") {
    auto b = make_basis(2, 1);
    LinearOperator c = build_C_operator(b, 1.0, 0.0);
    LinearOperator q(Eigen::MatrixXd(0.1 * MatrixXd::Identity(b->size(), b->size())));
    auto traj = integrate_slow_fast(b, VectorXd::Zero(b->size()), VectorXd::Zero(b->size()), c, q,
                                    0.5, 0.25, 3, 5, 0);
    std::string csv = trajectory_to_csv(traj);
    std::string header = csv.substr(0, csv.find('\n'));
    CHECK(std::count(header.begin(), header.end(), ',') == 3 * b->size());
}
