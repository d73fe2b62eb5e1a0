pub mod thinning;
