//! Compiles the book's code listings as doc-tests so the guide in
//! `book/` stays in sync with the library (`cargo test --doc`).

macro_rules! chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        #[allow(dead_code)]
        pub struct $name;
    };
}

chapter!(Introduction, "../../../book/src/introduction.md");
chapter!(Calibration, "../../../book/src/calibration.md");
chapter!(ProfileEstimation, "../../../book/src/profile-estimation.md");
chapter!(Bandwidths, "../../../book/src/bandwidths.md");
chapter!(Testing, "../../../book/src/testing.md");
chapter!(Simulation, "../../../book/src/simulation.md");
chapter!(Cli, "../../../book/src/cli.md");
