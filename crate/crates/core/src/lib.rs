pub mod components;
pub mod metadata;
pub mod models;
pub mod sim;
pub mod design;
pub mod emulator;
pub mod optim;
pub mod pool;
pub mod adapt;
pub mod registry;
