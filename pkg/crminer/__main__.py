import sys

from crminer.cli import main

sys.exit(main())
