//! Harness around the `dohcore` building blocks: a simulated end-to-end
//! scenario runner, a config generator, classifier training and prediction
//! commands, and a live HTTP adapter for running the client and server over
//! a real socket.

pub mod clock;
pub mod genconfig;
pub mod live;
pub mod loopback;
pub mod predict;
pub mod scenario;
pub mod timefmt;
pub mod train;
