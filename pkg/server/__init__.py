# Server package

