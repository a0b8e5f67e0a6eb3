pub mod liecore;
pub mod targets;
pub mod kempfness;
pub mod filtstab;
pub mod vortexlat;
pub mod cli;
