# Empty init file
