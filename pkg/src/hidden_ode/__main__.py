import sys

from hidden_ode.cli import main

sys.exit(main())
