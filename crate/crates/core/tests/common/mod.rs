pub mod gradsuite;
