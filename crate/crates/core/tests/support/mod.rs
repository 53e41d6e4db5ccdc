pub mod messages;
pub mod oracle;
