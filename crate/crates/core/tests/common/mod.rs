#![allow(dead_code)]

pub mod cascades;
