//! Fixed workloads shared by the benchmarks.

use twrelay::ergodic_opt::{solve_ergodic, ErgodicSolution};
use twrelay::static_opt::{solve_static, StaticSolution};
use twrelay::{ArrivalRates, ChannelGains, FadingChannel};

pub fn gains() -> ChannelGains {
    ChannelGains::new(1.0, 2.0, 1.0, 2.0).expect("positive gains")
}

pub fn rates() -> ArrivalRates {
    ArrivalRates::new(0.5, 1.0, 0.5).expect("valid rates")
}

pub fn fading() -> FadingChannel {
    FadingChannel::rayleigh(1.0, 1.0, 1.0, 1.0).expect("positive means")
}

pub fn static_solution() -> StaticSolution {
    solve_static(&gains(), &rates()).expect("feasible")
}

pub fn ergodic_solution() -> ErgodicSolution {
    solve_ergodic(&fading().mode_distributions(), &rates()).expect("feasible")
}
