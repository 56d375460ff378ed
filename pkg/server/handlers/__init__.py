# Request handlers package

